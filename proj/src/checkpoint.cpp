// SPDX-License-Identifier: Apache-2.0

#include "csmoe/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "csmoe/errors.hpp"

namespace csmoe {

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : ckpt.params.all()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"values", p->value.data()}});
  }
  const nlohmann::json j = {{"format_version", Checkpoint::kFormatVersion},
                            {"step", ckpt.step},
                            {"config", to_json(ckpt.config)},
                            {"params", std::move(params)}};
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != Checkpoint::kFormatVersion) {
      throw CompatibilityError("unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.step = j.at("step").get<long>();
    ckpt.config = train_config_from_json(j.at("config"));
    for (const auto& p : j.at("params")) {
      const int rows = p.at("rows").get<int>();
      const int cols = p.at("cols").get<int>();
      auto values = p.at("values").get<std::vector<double>>();
      if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw ParseError("parameter " + p.at("name").get<std::string>() + " has " + std::to_string(values.size()) +
                             " values for shape " + std::to_string(rows) + "x" + std::to_string(cols),
                         0);
      }
      ckpt.params.add(p.at("name").get<std::string>(), Matrix(rows, cols, std::move(values)));
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(ckpt);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return checkpoint_from_string(text.str());
}

}  // namespace csmoe

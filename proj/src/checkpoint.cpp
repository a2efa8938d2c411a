#include "mmcoref/checkpoint.hpp"

#include <fstream>
#include <map>

#include "mmcoref/errors.hpp"

namespace mmcoref {

using nlohmann::json;

json checkpoint_to_json(const Model& model) {
  json params = json::array();
  model.params.visit([&](const std::string& name, const Tensor& t) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  });
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", config_to_json(model.config)},
          {"vocab", model.vocab.tokens()},
          {"params", params}};
}

Model checkpoint_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw ParseError("not a model checkpoint");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    Model model;
    model.config = config_from_json(doc.at("config"));
    model.vocab = Vocab(doc.at("vocab").get<std::vector<std::string>>());
    model.params = init_params(model.config);

    std::map<std::string, const json*> stored;
    for (const auto& p : doc.at("params")) stored[p.at("name").get<std::string>()] = &p;
    model.params.visit([&](const std::string& name, Tensor& t) {
      auto it = stored.find(name);
      if (it == stored.end()) throw ParseError("checkpoint lacks parameter '" + name + "'");
      auto shape = it->second->at("shape").get<Shape>();
      auto data = it->second->at("data").get<std::vector<double>>();
      if (shape != t.shape()) {
        throw ParseError("parameter '" + name + "' has shape " + shape_string(shape) +
                         ", config implies " + shape_string(t.shape()));
      }
      t = Tensor::from(std::move(shape), std::move(data), true);
      stored.erase(it);
    });
    if (!stored.empty()) throw ParseError("checkpoint has unknown parameter '" + stored.begin()->first + "'");
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  out << checkpoint_to_json(model).dump() << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace mmcoref

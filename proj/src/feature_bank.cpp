#include "mmcoref/feature_bank.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "mmcoref/data_model.hpp"
#include "mmcoref/errors.hpp"

namespace mmcoref {

using nlohmann::json;

std::span<const double> FeatureBank::lookup(const std::string& channel, const std::string& id) const {
  auto c = channels.find(channel);
  if (c == channels.end()) throw LookupError("feature channel '" + channel + "' not loaded");
  auto v = c->second.vectors.find(id);
  if (v == c->second.vectors.end()) {
    throw LookupError("feature id '" + id + "' missing from channel '" + channel + "'");
  }
  return v->second;
}

std::size_t FeatureBank::dim(const std::string& channel) const {
  auto c = channels.find(channel);
  if (c == channels.end()) throw LookupError("feature channel '" + channel + "' not loaded");
  return c->second.dim;
}

FeatureChannel load_feature_channel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feature file '" + path.string() + "'");
  FeatureChannel channel;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      if (!have_header) {
        channel.name = j.at("channel").get<std::string>();
        channel.dim = j.at("dim").get<std::size_t>();
        have_header = true;
        continue;
      }
      auto id = j.at("id").get<std::string>();
      auto vec = j.at("vec").get<std::vector<double>>();
      if (vec.size() != channel.dim) {
        throw ValidationError(where + ": vector '" + id + "' has dimension " +
                              std::to_string(vec.size()) + ", channel '" + channel.name +
                              "' declares " + std::to_string(channel.dim));
      }
      if (!channel.vectors.emplace(id, std::move(vec)).second) {
        throw ValidationError(where + ": duplicate feature id '" + id + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError(path.string() + ": missing channel header line");
  return channel;
}

void save_feature_channel(const FeatureChannel& channel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  out << json{{"channel", channel.name}, {"dim", channel.dim}}.dump() << '\n';
  for (const auto& [id, vec] : channel.vectors) out << json{{"id", id}, {"vec", vec}}.dump() << '\n';
}

FeatureBank load_feature_bank(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError("feature bank directory '" + dir.string() + "' does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  FeatureBank bank;
  for (const auto& f : files) {
    auto channel = load_feature_channel(f);
    auto name = channel.name;
    if (!bank.channels.emplace(name, std::move(channel)).second) {
      throw ValidationError("feature channel '" + name + "' defined twice in " + dir.string());
    }
  }
  return bank;
}

void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, channel] : bank.channels) save_feature_channel(channel, dir / (name + ".jsonl"));
}

void validate_feature_coverage(const FeatureBank& bank, const Dataset& dataset,
                               const std::vector<std::string>& image_channels,
                               const std::vector<std::string>& kb_channels) {
  auto require = [&](const std::string& channel, const std::string& id, const std::string& owner) {
    auto c = bank.channels.find(channel);
    if (c == bank.channels.end()) throw ValidationError("feature channel '" + channel + "' missing");
    if (!c->second.vectors.contains(id)) {
      throw ValidationError("feature id '" + id + "' (" + owner + ") missing from channel '" +
                            channel + "'");
    }
  };
  for (const auto& [sid, scene] : dataset.scenes) {
    for (const auto& ch : image_channels) require(ch, scene.feature_id, "scene " + sid);
    for (const auto& o : scene.objects) {
      const std::string owner = "scene " + sid + " object " + std::to_string(o.index);
      for (const auto& ch : image_channels) require(ch, o.feature_id, owner);
      for (const auto& ch : kb_channels) require(ch, o.feature_id, owner);
    }
  }
}

}  // namespace mmcoref

#pragma once

// Parameter checkpoint container.
//
// Layout:
//   "AMINET1\n"
//   header length    uint64, little endian
//   header           UTF-8 JSON: format, config, vocabulary, arrays [{name, shape}]
//   payload          every array in header order, row-major float64 little endian

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aminet/error.hpp"
#include "aminet/model.hpp"

namespace aminet {

inline constexpr std::string_view kCheckpointMagic = "AMINET1";

struct Checkpoint {
  ModelConfig config;
  ModelParameters parameters;
  std::vector<std::string> vocabulary;  // tokens in id order starting at id 1
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"hidden_sizes", c.hidden_sizes},
          {"instance_pooling", std::string(name(c.instance_pooling))},
          {"bag_pooling", std::string(name(c.bag_pooling))},
          {"d_l", c.d_l},
          {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
    c.instance_pooling = parse_instance_pooling(j.at("instance_pooling").get<std::string>());
    c.bag_pooling = parse_bag_pooling(j.at("bag_pooling").get<std::string>());
    c.d_l = j.at("d_l").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes;
  for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes.data(), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.config.validate();
  nlohmann::json arrays = nlohmann::json::array();
  ckpt.parameters.visit([&](const std::string& key, const Tensor& t) {
    arrays.push_back({{"name", key}, {"shape", t.shape()}});
  });
  const nlohmann::json header = {{"format", kCheckpointMagic},
                                 {"config", config_to_json(ckpt.config)},
                                 {"vocabulary", ckpt.vocabulary},
                                 {"arrays", arrays}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n';
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  ckpt.parameters.visit([&](const std::string&, const Tensor& t) {
    for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  });
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

namespace detail {

inline void read_header(const nlohmann::json& header, Checkpoint& ckpt) {
  ckpt.config = config_from_json(header.at("config"));
  ckpt.vocabulary = header.value("vocabulary", std::vector<std::string>{});
  ckpt.parameters = zero_parameters(ckpt.config);

  const auto& arrays = header.at("arrays");
  std::size_t index = 0;
  ckpt.parameters.visit([&](const std::string& key, Tensor& t) {
    if (index >= arrays.size()) throw DataError("checkpoint is missing array " + key);
    const auto& entry = arrays[index++];
    if (entry.at("name").get<std::string>() != key ||
        entry.at("shape").get<Shape>() != t.shape()) {
      throw DataError("checkpoint array " + entry.at("name").get<std::string>() +
                      " does not match expected " + key + " " + to_string(t.shape()));
    }
  });
  if (index != arrays.size()) throw DataError("checkpoint has unexpected extra arrays");
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw DataError(path.string() + " is not an AMINET1 checkpoint");
  }
  const std::uint64_t length = detail::get_u64(in);
  if (!in || length > (1u << 30)) throw DataError("truncated checkpoint header in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unreadable checkpoint header in " + path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    detail::read_header(header, ckpt);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("invalid model config in " + path.string() + ": " + e.what());
  }

  ckpt.parameters.visit([&](const std::string& key, Tensor& t) {
    for (double& v : t.values()) v = std::bit_cast<double>(detail::get_u64(in));
    if (!in) throw DataError("checkpoint payload truncated in " + key);
  });
  return ckpt;
}

}  // namespace aminet

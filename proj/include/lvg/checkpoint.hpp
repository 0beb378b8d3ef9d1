#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvg/binio.hpp"
#include "lvg/conditioning.hpp"
#include "lvg/errors.hpp"
#include "lvg/latentae.hpp"
#include "lvg/nn.hpp"

namespace lvg {

enum class ModelRole : std::uint8_t { ae = 0, disc = 1, score = 2, vfield = 3, speaker_table = 4 };

inline const char* role_name(ModelRole r) {
  switch (r) {
    case ModelRole::ae: return "ae";
    case ModelRole::disc: return "disc";
    case ModelRole::score: return "score";
    case ModelRole::vfield: return "vfield";
    case ModelRole::speaker_table: return "speaker-table";
  }
  return "?";
}

constexpr std::uint16_t kCheckpointVersion = 1;

// Self-describing serialized model: the arch descriptor alone suffices to
// rebuild the network shape, the f32 blob fills it in.
struct ModelCheckpoint {
  std::uint16_t version = kCheckpointVersion;
  ModelRole role = ModelRole::ae;
  std::string arch;  // JSON descriptor
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  std::vector<float> params;

  bool operator==(const ModelCheckpoint& o) const {
    return version == o.version && role == o.role && arch == o.arch &&
           config_hash == o.config_hash && seed == o.seed && epoch == o.epoch &&
           params == o.params;
  }
};

inline std::vector<std::uint8_t> checkpoint_bytes(const ModelCheckpoint& c) {
  ByteWriter w;
  w.raw("LVGC", 4);
  w.u16(c.version);
  w.u8(static_cast<std::uint8_t>(c.role));
  w.str(c.arch);
  w.u64(c.config_hash);
  w.u64(c.seed);
  w.u32(c.epoch);
  w.u64(c.params.size());
  for (float v : c.params) w.f32(v);
  w.u32(crc32(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw IoError(path.string() + ": truncated file");
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw IoError(path.string() + ": CRC mismatch");
  ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[4];
  r.need(4);
  std::memcpy(magic, r.p, 4);
  r.pos += 4;
  if (std::string(magic, 4) != "LVGC") throw IoError(path.string() + ": bad magic");
  ModelCheckpoint c;
  c.version = r.u16();
  if (c.version != kCheckpointVersion)
    throw IoError(path.string() + ": checkpoint version " + std::to_string(c.version) +
                  " needs an upgrade step (supported: " + std::to_string(kCheckpointVersion) + ")");
  c.role = static_cast<ModelRole>(r.u8());
  c.arch = r.str();
  c.config_hash = r.u64();
  c.seed = r.u64();
  c.epoch = r.u32();
  const std::uint64_t count = r.u64();
  c.params.resize(count);
  for (auto& v : c.params) v = r.f32();
  if (r.pos != r.n) throw IoError(path.string() + ": trailing bytes");
  return c;
}

// --- network <-> checkpoint packing ------------------------------------------

namespace detail {

inline nlohmann::json net_arch(const DenseNet<double>& net) {
  nlohmann::json j;
  auto dims = nlohmann::json::array();
  dims.push_back(net.input_dim());
  for (const auto& l : net.layers) dims.push_back(l.w.rows);
  j["dims"] = std::move(dims);
  auto acts = nlohmann::json::array();
  for (const auto& l : net.layers) acts.push_back(activation_name(l.act));
  j["acts"] = std::move(acts);
  return j;
}

inline DenseNet<double> net_from_arch(const nlohmann::json& j) {
  const auto& dims = j.at("dims");
  const auto& acts = j.at("acts");
  if (dims.size() < 2 || acts.size() + 1 != dims.size())
    throw IoError("checkpoint arch: inconsistent dims/acts");
  DenseNet<double> net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer<double> l;
    l.w = Tensor2<double>(dims[i + 1].get<std::size_t>(), dims[i].get<std::size_t>());
    l.b.assign(dims[i + 1].get<std::size_t>(), 0.0);
    l.act = activation_from_name(acts[i].get<std::string>());
    net.layers.push_back(std::move(l));
  }
  return net;
}

inline void pack_net(const DenseNet<double>& net, std::vector<float>& out) {
  for_each_param(net, [&](const double& v) { out.push_back(static_cast<float>(v)); });
}

inline std::size_t unpack_net(DenseNet<double>& net, const std::vector<float>& in,
                              std::size_t offset) {
  if (offset + net.param_count() > in.size()) throw IoError("checkpoint: parameter blob too short");
  for_each_param(net, [&](double& v) { v = static_cast<double>(in[offset++]); });
  return offset;
}

}  // namespace detail

inline ModelCheckpoint checkpoint_from_autoencoder(const Autoencoder& ae, std::uint64_t config_hash,
                                                   std::uint64_t seed, std::uint32_t epoch) {
  ModelCheckpoint c;
  c.role = ModelRole::ae;
  nlohmann::json j;
  j["type"] = "ae";
  j["feat_dim"] = ae.feat_dim;
  j["bottleneck"] = ae.bottleneck;
  j["context"] = ae.context;
  j["enc"] = detail::net_arch(ae.enc);
  j["dec"] = detail::net_arch(ae.dec);
  c.arch = j.dump();
  c.config_hash = config_hash;
  c.seed = seed;
  c.epoch = epoch;
  detail::pack_net(ae.enc, c.params);
  detail::pack_net(ae.dec, c.params);
  return c;
}

inline Autoencoder autoencoder_from_checkpoint(const ModelCheckpoint& c) {
  if (c.role != ModelRole::ae) throw ConfigError("checkpoint role is not 'ae'");
  const auto j = nlohmann::json::parse(c.arch);
  Autoencoder ae;
  ae.feat_dim = j.at("feat_dim").get<std::size_t>();
  ae.bottleneck = j.at("bottleneck").get<std::size_t>();
  ae.context = j.at("context").get<std::size_t>();
  ae.enc = detail::net_from_arch(j.at("enc"));
  ae.dec = detail::net_from_arch(j.at("dec"));
  std::size_t off = detail::unpack_net(ae.enc, c.params, 0);
  off = detail::unpack_net(ae.dec, c.params, off);
  if (off != c.params.size()) throw IoError("checkpoint: parameter blob too long");
  return ae;
}

inline ModelCheckpoint checkpoint_from_discriminator(const Discriminator& d,
                                                     std::uint64_t config_hash, std::uint64_t seed,
                                                     std::uint32_t epoch) {
  ModelCheckpoint c;
  c.role = ModelRole::disc;
  nlohmann::json j;
  j["type"] = "disc";
  j["window"] = d.window;
  j["hop"] = d.hop;
  j["net"] = detail::net_arch(d.net);
  c.arch = j.dump();
  c.config_hash = config_hash;
  c.seed = seed;
  c.epoch = epoch;
  detail::pack_net(d.net, c.params);
  return c;
}

inline Discriminator discriminator_from_checkpoint(const ModelCheckpoint& c) {
  if (c.role != ModelRole::disc) throw ConfigError("checkpoint role is not 'disc'");
  const auto j = nlohmann::json::parse(c.arch);
  Discriminator d;
  d.window = j.at("window").get<std::size_t>();
  d.hop = j.at("hop").get<std::size_t>();
  d.net = detail::net_from_arch(j.at("net"));
  const std::size_t off = detail::unpack_net(d.net, c.params, 0);
  if (off != c.params.size()) throw IoError("checkpoint: parameter blob too long");
  return d;
}

inline ModelCheckpoint checkpoint_from_conditioned_net(const ConditionedNet& net, ModelRole role,
                                                       std::uint64_t config_hash,
                                                       std::uint64_t seed, std::uint32_t epoch) {
  if (role != ModelRole::score && role != ModelRole::vfield)
    throw ConfigError("conditioned net role must be score or vfield");
  ModelCheckpoint c;
  c.role = role;
  nlohmann::json j;
  j["type"] = "cond_net";
  j["x_dim"] = net.x_dim;
  j["ds"] = net.ds;
  j["dp"] = net.dp;
  j["sin_dim"] = net.temb.sin_dim;
  j["trunk"] = detail::net_arch(net.trunk);
  j["temb"] = detail::net_arch(net.temb.mlp);
  c.arch = j.dump();
  c.config_hash = config_hash;
  c.seed = seed;
  c.epoch = epoch;
  detail::pack_net(net.trunk, c.params);
  detail::pack_net(net.temb.mlp, c.params);
  return c;
}

inline ConditionedNet conditioned_net_from_checkpoint(const ModelCheckpoint& c) {
  if (c.role != ModelRole::score && c.role != ModelRole::vfield)
    throw ConfigError("checkpoint role is not a score/vfield net");
  const auto j = nlohmann::json::parse(c.arch);
  ConditionedNet net;
  net.x_dim = j.at("x_dim").get<std::size_t>();
  net.ds = j.at("ds").get<std::size_t>();
  net.dp = j.at("dp").get<std::size_t>();
  net.temb.sin_dim = j.at("sin_dim").get<std::size_t>();
  net.trunk = detail::net_from_arch(j.at("trunk"));
  net.temb.mlp = detail::net_from_arch(j.at("temb"));
  std::size_t off = detail::unpack_net(net.trunk, c.params, 0);
  off = detail::unpack_net(net.temb.mlp, c.params, off);
  if (off != c.params.size()) throw IoError("checkpoint: parameter blob too long");
  return net;
}

inline ModelCheckpoint checkpoint_from_speaker_table(const SpeakerTable& t,
                                                     std::uint64_t config_hash, std::uint64_t seed,
                                                     std::uint32_t epoch) {
  ModelCheckpoint c;
  c.role = ModelRole::speaker_table;
  nlohmann::json j;
  j["type"] = "speaker_table";
  j["speakers"] = t.speakers();
  j["dim"] = t.dim();
  c.arch = j.dump();
  c.config_hash = config_hash;
  c.seed = seed;
  c.epoch = epoch;
  c.params.reserve(t.emb.size());
  for (double v : t.emb.data) c.params.push_back(static_cast<float>(v));
  return c;
}

inline SpeakerTable speaker_table_from_checkpoint(const ModelCheckpoint& c) {
  if (c.role != ModelRole::speaker_table) throw ConfigError("checkpoint role is not speaker-table");
  const auto j = nlohmann::json::parse(c.arch);
  SpeakerTable t;
  t.emb = Tensor2<double>(j.at("speakers").get<std::size_t>(), j.at("dim").get<std::size_t>());
  if (c.params.size() != t.emb.size()) throw IoError("checkpoint: parameter blob size mismatch");
  for (std::size_t i = 0; i < t.emb.size(); ++i)
    t.emb.data[i] = static_cast<double>(c.params[i]);
  return t;
}

}  // namespace lvg

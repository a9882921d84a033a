#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlt/model.hpp"
#include "dlt/qnet.hpp"
#include "dlt/serde.hpp"

namespace dlt {

// Checkpoint container: 8-byte magic, little-endian u64 header length, JSON
// header, raw scalar payload. Weights only; optimizer moments restart at
// zero on load. Payload order for models: group representatives ascending,
// then embedding, position and head.

namespace ckpt_detail {

constexpr char kMagic[8] = {'D', 'L', 'T', 'C', 'K', 'P', 'T', '1'};

template <class S>
const char* scalar_name();
template <>
inline const char* scalar_name<float>() {
  return "f32";
}
template <>
inline const char* scalar_name<double>() {
  return "f64";
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

template <class S>
void write_scalars(std::ostream& out, const VecX<S>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(S) * v.size()));
}

template <class S>
void read_scalars(std::istream& in, VecX<S>& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(S) * v.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated payload");
}

inline json open_header(std::istream& in, const std::string& path,
                        const std::string& expect_kind) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t len = read_u64(in);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  json j = json::parse(header);
  if (j.at("kind").get<std::string>() != expect_kind)
    throw std::runtime_error("checkpoint: " + path + " holds a '" +
                             j.at("kind").get<std::string>() + "', expected '" +
                             expect_kind + "'");
  return j;
}

inline void write_container(const std::string& path, const json& header,
                            const std::function<void(std::ostream&)>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  const std::string h = header.dump();
  write_u64(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  payload(out);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

}  // namespace ckpt_detail

template <class S>
void save_model_checkpoint(const std::string& path,
                           const ParameterStore<S>& store, long step) {
  const TyingState tying = store.tying();
  std::vector<int> reps;
  for (int i = 0; i < store.cfg.n_layers; ++i)
    if (tying[i] == i) reps.push_back(i);
  std::vector<int> frozen(store.frozen.begin(), store.frozen.end());

  json header{{"kind", "model"},
              {"scalar", ckpt_detail::scalar_name<S>()},
              {"config", store.cfg},
              {"step", step},
              {"tying", tying},
              {"frozen", frozen},
              {"reps", reps}};

  ckpt_detail::write_container(path, header, [&](std::ostream& out) {
    for (int r : reps) ckpt_detail::write_scalars<S>(out, store.blocks[r]->w);
    ckpt_detail::write_scalars<S>(out, store.embedding.w);
    ckpt_detail::write_scalars<S>(out, store.position.w);
    ckpt_detail::write_scalars<S>(out, store.head.w);
  });
}

template <class S>
struct LoadedModel {
  ParameterStore<S> store;
  long step = 0;
};

template <class S>
LoadedModel<S> load_model_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  const json header = ckpt_detail::open_header(in, path, "model");
  if (header.at("scalar").get<std::string>() !=
      ckpt_detail::scalar_name<S>())
    throw std::runtime_error("checkpoint: scalar type mismatch in " + path);

  LoadedModel<S> loaded;
  const ModelConfig cfg = header.at("config").get<ModelConfig>();
  Rng dummy(0);
  loaded.store = init_model<S>(cfg, dummy);
  loaded.step = header.at("step").get<long>();

  const TyingState tying = header.at("tying").get<TyingState>();
  validate(tying);
  const auto frozen = header.at("frozen").get<std::vector<int>>();
  const auto reps = header.at("reps").get<std::vector<int>>();
  if (tying.size() != cfg.n_layers ||
      static_cast<int>(frozen.size()) != cfg.n_layers)
    throw std::runtime_error("checkpoint: layer metadata mismatch in " + path);

  for (int r : reps) ckpt_detail::read_scalars<S>(in, loaded.store.blocks[r]->w);
  for (int i = 0; i < cfg.n_layers; ++i) {
    if (tying[i] != i) loaded.store.blocks[i] = loaded.store.blocks[tying[i]];
    loaded.store.blocks[i]->reset_moments();
    loaded.store.frozen[i] = static_cast<char>(frozen[i]);
  }
  ckpt_detail::read_scalars<S>(in, loaded.store.embedding.w);
  ckpt_detail::read_scalars<S>(in, loaded.store.position.w);
  ckpt_detail::read_scalars<S>(in, loaded.store.head.w);
  loaded.store.embedding.reset_moments();
  loaded.store.position.reset_moments();
  loaded.store.head.reset_moments();
  return loaded;
}

template <class S>
void save_qnet_checkpoint(const std::string& path, const QNet<S>& net,
                          std::uint64_t seed, long step) {
  json header{{"kind", "qnet"},
              {"scalar", ckpt_detail::scalar_name<S>()},
              {"n_layers", net.n_layers},
              {"input_dim", net.input_dim},
              {"hidden_dim", net.hidden_dim},
              {"output_dim", net.output_dim},
              {"seed", seed},
              {"step", step}};
  ckpt_detail::write_container(path, header, [&](std::ostream& out) {
    const VecX<S> w1 = Eigen::Map<const VecX<S>>(net.w1.data(), net.w1.size());
    const VecX<S> w2 = Eigen::Map<const VecX<S>>(net.w2.data(), net.w2.size());
    ckpt_detail::write_scalars<S>(out, w1);
    ckpt_detail::write_scalars<S>(out, net.b1);
    ckpt_detail::write_scalars<S>(out, w2);
    ckpt_detail::write_scalars<S>(out, net.b2);
  });
}

template <class S>
QNet<S> load_qnet_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  const json header = ckpt_detail::open_header(in, path, "qnet");
  if (header.at("scalar").get<std::string>() != ckpt_detail::scalar_name<S>())
    throw std::runtime_error("checkpoint: scalar type mismatch in " + path);
  Rng dummy(0);
  QNet<S> net = make_qnet<S>(header.at("n_layers").get<int>(), dummy,
                             header.at("hidden_dim").get<int>());
  VecX<S> w1(net.w1.size()), w2(net.w2.size());
  ckpt_detail::read_scalars<S>(in, w1);
  ckpt_detail::read_scalars<S>(in, net.b1);
  ckpt_detail::read_scalars<S>(in, w2);
  ckpt_detail::read_scalars<S>(in, net.b2);
  Eigen::Map<VecX<S>>(net.w1.data(), net.w1.size()) = w1;
  Eigen::Map<VecX<S>>(net.w2.data(), net.w2.size()) = w2;
  net.moment1.setZero();
  net.moment2.setZero();
  net.adam_t = 0;
  return net;
}

}  // namespace dlt

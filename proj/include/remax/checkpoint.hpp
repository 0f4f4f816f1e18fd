#pragma once

// Self-describing binary container for learner state.
//
// Layout (little-endian host order):
//   magic "REMAXCKP" | u32 version
//   repeated records: u8 kind | u32 name_len | name | payload
//     kind 1 (matrix): u64 rows | u64 cols | rows*cols f64 (column-major)
//     kind 2 (string): u64 len | bytes
//     kind 3 (int):    i64
//   terminator record: kind 0

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <variant>

#include "remax/errors.hpp"
#include "remax/maddpg.hpp"
#include "remax/nn.hpp"
#include "remax/rng.hpp"

namespace remax::checkpoint {

inline constexpr char kMagic[8] = {'R', 'E', 'M', 'A', 'X', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

using Record = std::variant<nn::Matrix, std::string, std::int64_t>;
using RecordMap = std::map<std::string, Record>;

class Writer {
 public:
  void matrix(const std::string& name, const nn::Matrix& m) { records_.emplace_back(name, m); }
  void vector(const std::string& name, const nn::Vector& v) { records_.emplace_back(name, nn::Matrix(v)); }
  void text(const std::string& name, const std::string& s) { records_.emplace_back(name, s); }
  void integer(const std::string& name, std::int64_t v) { records_.emplace_back(name, v); }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof kMagic);
    put(os, kVersion);
    for (const auto& [name, rec] : records_) {
      const auto kind = static_cast<std::uint8_t>(rec.index() + 1);
      put(os, kind);
      put(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      if (const auto* m = std::get_if<nn::Matrix>(&rec)) {
        put(os, static_cast<std::uint64_t>(m->rows()));
        put(os, static_cast<std::uint64_t>(m->cols()));
        os.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
      } else if (const auto* s = std::get_if<std::string>(&rec)) {
        put(os, static_cast<std::uint64_t>(s->size()));
        os.write(s->data(), static_cast<std::streamsize>(s->size()));
      } else {
        put(os, std::get<std::int64_t>(rec));
      }
    }
    put(os, std::uint8_t{0});
    if (!os) throw IoError("failed writing checkpoint: " + path);
  }

 private:
  template <class T>
  static void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }

  std::vector<std::pair<std::string, Record>> records_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a checkpoint file: " + path);
    version_ = get<std::uint32_t>(is);
    if (version_ != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version_) + ": " + path);
    for (;;) {
      const auto kind = get<std::uint8_t>(is);
      if (kind == 0) break;
      const auto len = get<std::uint32_t>(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      switch (kind) {
        case 1: {
          const auto rows = get<std::uint64_t>(is);
          const auto cols = get<std::uint64_t>(is);
          nn::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
          is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
          records_[name] = std::move(m);
          break;
        }
        case 2: {
          const auto n = get<std::uint64_t>(is);
          std::string s(n, '\0');
          is.read(s.data(), static_cast<std::streamsize>(n));
          records_[name] = std::move(s);
          break;
        }
        case 3:
          records_[name] = get<std::int64_t>(is);
          break;
        default:
          throw IoError("corrupt checkpoint record in " + path);
      }
      if (!is) throw IoError("truncated checkpoint: " + path);
    }
  }

  std::uint32_t version() const { return version_; }
  bool has(const std::string& name) const { return records_.count(name) != 0; }
  const RecordMap& records() const { return records_; }

  const nn::Matrix& matrix(const std::string& name) const { return typed<nn::Matrix>(name); }
  nn::Vector vector(const std::string& name) const {
    const auto& m = matrix(name);
    if (m.cols() != 1) throw IoError("checkpoint record is not a vector: " + name);
    return m.col(0);
  }
  const std::string& text(const std::string& name) const { return typed<std::string>(name); }
  std::int64_t integer(const std::string& name) const { return typed<std::int64_t>(name); }

 private:
  template <class T>
  const T& typed(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw IoError("checkpoint " + path_ + " is missing record " + name);
    const T* v = std::get_if<T>(&it->second);
    if (!v) throw IoError("checkpoint record has unexpected type: " + name);
    return *v;
  }

  template <class T>
  T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("truncated checkpoint: " + path_);
    return v;
  }

  std::string path_;
  std::uint32_t version_ = 0;
  RecordMap records_;
};

// ---------------------------------------------------------------------------

inline void write_mlp(Writer& w, const std::string& prefix, const nn::MlpParams& p) {
  nn::Matrix sizes(static_cast<Eigen::Index>(p.spec.layer_sizes.size()), 1);
  for (std::size_t k = 0; k < p.spec.layer_sizes.size(); ++k) sizes(static_cast<Eigen::Index>(k), 0) = p.spec.layer_sizes[k];
  w.matrix(prefix + "/sizes", sizes);
  w.integer(prefix + "/hidden", static_cast<std::int64_t>(p.spec.hidden.kind));
  w.text(prefix + "/slope", std::to_string(p.spec.hidden.slope));
  w.integer(prefix + "/output", static_cast<std::int64_t>(p.spec.output));
  w.integer(prefix + "/revision", static_cast<std::int64_t>(p.revision));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    w.matrix(prefix + "/w" + std::to_string(l), p.layers[l].weight);
    w.vector(prefix + "/b" + std::to_string(l), p.layers[l].bias);
  }
}

inline void read_mlp(const Reader& r, const std::string& prefix, nn::MlpParams& p) {
  const auto& sizes = r.matrix(prefix + "/sizes");
  if (sizes.rows() != static_cast<Eigen::Index>(p.spec.layer_sizes.size()))
    throw IoError("checkpoint network depth mismatch at " + prefix);
  for (std::size_t k = 0; k < p.spec.layer_sizes.size(); ++k)
    if (sizes(static_cast<Eigen::Index>(k), 0) != p.spec.layer_sizes[k])
      throw IoError("checkpoint network shape mismatch at " + prefix);
  p.revision = static_cast<std::uint64_t>(r.integer(prefix + "/revision"));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    p.layers[l].weight = r.matrix(prefix + "/w" + std::to_string(l));
    p.layers[l].bias = r.vector(prefix + "/b" + std::to_string(l));
  }
  if (!p.same_shape(nn::MlpParams::zeros(p.spec))) throw IoError("checkpoint tensor shape mismatch at " + prefix);
}

inline void write_adam(Writer& w, const std::string& prefix, const nn::AdamState& s) {
  w.integer(prefix + "/step", s.step);
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    w.vector(prefix + "/m" + std::to_string(k), s.m[k]);
    w.vector(prefix + "/v" + std::to_string(k), s.v[k]);
  }
}

inline void read_adam(const Reader& r, const std::string& prefix, nn::AdamState& s) {
  s.step = r.integer(prefix + "/step");
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    s.m[k] = r.vector(prefix + "/m" + std::to_string(k));
    s.v[k] = r.vector(prefix + "/v" + std::to_string(k));
  }
}

inline void write_learners(Writer& w, const maddpg::LearnerSet& ls) {
  w.integer("learners/n_agents", ls.n_agents);
  w.integer("learners/obs_dim", ls.obs_dim);
  for (int i = 0; i < ls.n_agents; ++i) {
    const auto& a = ls.agents[static_cast<std::size_t>(i)];
    const std::string p = "agent" + std::to_string(i);
    write_mlp(w, p + "/policy", a.policy);
    write_mlp(w, p + "/critic", a.critic);
    write_mlp(w, p + "/target_policy", a.target_policy);
    write_mlp(w, p + "/target_critic", a.target_critic);
    write_adam(w, p + "/policy_opt", a.policy_opt);
    write_adam(w, p + "/critic_opt", a.critic_opt);
  }
}

// `ls` must already have the right architecture (e.g. from make_learners).
inline void read_learners(const Reader& r, maddpg::LearnerSet& ls) {
  if (r.integer("learners/n_agents") != ls.n_agents || r.integer("learners/obs_dim") != ls.obs_dim)
    throw IoError("checkpoint agent count or observation size does not match the configuration");
  for (int i = 0; i < ls.n_agents; ++i) {
    auto& a = ls.agents[static_cast<std::size_t>(i)];
    const std::string p = "agent" + std::to_string(i);
    read_mlp(r, p + "/policy", a.policy);
    read_mlp(r, p + "/critic", a.critic);
    read_mlp(r, p + "/target_policy", a.target_policy);
    read_mlp(r, p + "/target_critic", a.target_critic);
    read_adam(r, p + "/policy_opt", a.policy_opt);
    read_adam(r, p + "/critic_opt", a.critic_opt);
  }
}

inline void write_buffer(Writer& w, const maddpg::ReplayBuffer& b) {
  const auto n = static_cast<Eigen::Index>(b.size());
  w.integer("replay/size", static_cast<std::int64_t>(b.size()));
  w.integer("replay/head", static_cast<std::int64_t>(b.next_slot()));
  w.matrix("replay/obs", b.obs_storage().leftCols(n));
  w.matrix("replay/actions", b.action_storage().leftCols(n));
  w.matrix("replay/rewards", b.reward_storage().leftCols(n));
  w.matrix("replay/next_obs", b.next_obs_storage().leftCols(n));
}

inline void read_buffer(const Reader& r, maddpg::ReplayBuffer& b) {
  b.restore(r.matrix("replay/obs"), r.matrix("replay/actions"), r.matrix("replay/rewards"),
            r.matrix("replay/next_obs"), static_cast<std::size_t>(r.integer("replay/size")),
            static_cast<std::size_t>(r.integer("replay/head")));
}

inline void save(const std::string& path, const maddpg::LearnerSet& ls, const Rng& rng,
                 const maddpg::ReplayBuffer* buffer = nullptr) {
  Writer w;
  write_learners(w, ls);
  w.text("rng/state", rng.save_state());
  if (buffer) write_buffer(w, *buffer);
  w.save(path);
}

// Restores into pre-shaped learners (and buffer when the file carries one).
inline void load(const std::string& path, maddpg::LearnerSet& ls, Rng* rng = nullptr,
                 maddpg::ReplayBuffer* buffer = nullptr) {
  Reader r(path);
  read_learners(r, ls);
  if (rng) rng->load_state(r.text("rng/state"));
  if (buffer && r.has("replay/size")) read_buffer(r, *buffer);
}

}  // namespace remax::checkpoint

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "oaif/policy.hpp"

namespace oaif {

/// Immutable policy snapshot: frozen parameters plus identity metadata.
struct PolicySnapshot {
  PolicyParams params;
  std::string policy_id;
  std::uint64_t step = 0;

  static PolicySnapshot of(const PolicyParams& params, std::string policy_id,
                           std::uint64_t step) {
    return PolicySnapshot{params, std::move(policy_id), step};
  }
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'O', 'A', 'I', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return value;
}

}  // namespace detail

inline void save_checkpoint(const PolicySnapshot& snapshot, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod(out, detail::kCheckpointVersion);
  detail::write_pod(out, static_cast<std::uint32_t>(snapshot.params.vocab_size));
  detail::write_pod(out, static_cast<std::uint32_t>(snapshot.params.order));
  detail::write_pod(out, static_cast<std::uint64_t>(snapshot.params.features));
  detail::write_pod(out, snapshot.step);
  detail::write_pod(out, static_cast<std::uint32_t>(snapshot.policy_id.size()));
  out.write(snapshot.policy_id.data(),
            static_cast<std::streamsize>(snapshot.policy_id.size()));
  out.write(reinterpret_cast<const char*>(snapshot.params.weights.data()),
            static_cast<std::streamsize>(snapshot.params.weights.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline PolicySnapshot load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic: " + path);
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != detail::kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  }
  const auto vocab_size = detail::read_pod<std::uint32_t>(in);
  const auto order = detail::read_pod<std::uint32_t>(in);
  const auto features = detail::read_pod<std::uint64_t>(in);
  const auto step = detail::read_pod<std::uint64_t>(in);
  const auto id_len = detail::read_pod<std::uint32_t>(in);

  PolicySnapshot snapshot;
  snapshot.policy_id.resize(id_len);
  in.read(snapshot.policy_id.data(), id_len);
  snapshot.step = step;
  snapshot.params = PolicyParams::zeros(static_cast<int>(vocab_size),
                                        static_cast<int>(order),
                                        static_cast<std::int64_t>(features));
  in.read(reinterpret_cast<char*>(snapshot.params.weights.data()),
          static_cast<std::streamsize>(snapshot.params.weights.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated file: " + path);
  return snapshot;
}

}  // namespace oaif

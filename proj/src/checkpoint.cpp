#include "packer/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

namespace packer::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'P', 'K', 'R', 'P', 'O', 'L', 'C', 'Y'};
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxDim = 1u << 20;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("checkpoint truncated");
  return v;
}

}  // namespace

void write_params(const PolicyParams& params, std::ostream& os) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  const PolicyConfig& c = params.config();
  put<std::int32_t>(os, c.embed_dim);
  put<std::int32_t>(os, c.blocks);
  put<std::int32_t>(os, c.heads);
  put<std::int32_t>(os, static_cast<std::int32_t>(c.ablation));
  put<double>(os, c.leaky_slope);
  put<double>(os, c.ln_eps);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params.name(i);
    const Matrix& t = params.tensor(i);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols()));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

PolicyParams read_params(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size())) throw CheckpointError("checkpoint truncated");
  if (magic != kMagic) throw CheckpointError("not a policy checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  PolicyConfig c;
  c.embed_dim = get<std::int32_t>(is);
  c.blocks = get<std::int32_t>(is);
  c.heads = get<std::int32_t>(is);
  const auto ablation = get<std::int32_t>(is);
  if (ablation < 0 || ablation > static_cast<std::int32_t>(Ablation::MlpMixer))
    throw CheckpointError("checkpoint has an unknown ablation mode");
  c.ablation = static_cast<Ablation>(ablation);
  c.leaky_slope = get<double>(is);
  c.ln_eps = get<double>(is);
  const auto count = get<std::uint32_t>(is);
  if (count > 100000) throw CheckpointError("checkpoint tensor count is implausible");
  std::vector<std::string> names;
  std::vector<Matrix> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    if (len > kMaxName) throw CheckpointError("checkpoint tensor name is implausible");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint truncated");
    const auto rows = get<std::uint32_t>(is), cols = get<std::uint32_t>(is);
    if (rows > kMaxDim || cols > kMaxDim) throw CheckpointError("checkpoint tensor shape is implausible");
    Matrix t(rows, cols);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw CheckpointError("checkpoint truncated");
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint has trailing bytes");
  try {
    return PolicyParams(c, std::move(names), std::move(tensors));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint does not match its config: ") + e.what());
  }
}

void save_params(const PolicyParams& params, const std::string& path) {
  // Write then rename, so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
    write_params(params, os);
  }
  std::filesystem::rename(tmp, path);
}

PolicyParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  return read_params(is);
}

}  // namespace packer::nn

#include "packer/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "packer/pack_env.hpp"

namespace packer {

using nlohmann::json;

RsDataset generate_dataset(const BinDims& bin, int count, std::uint64_t seed, int length,
                           const std::vector<ItemDims>* types) {
  if (count < 0 || length < 1) throw std::invalid_argument("dataset count/length out of range");
  RsDataset ds;
  ds.bin = bin;
  ds.seed = seed;
  Rng rng(seed);
  ds.sequences.resize(static_cast<std::size_t>(count));
  for (auto& seq : ds.sequences) {
    seq.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) seq.push_back(draw_item(rng, bin, types));
  }
  return ds;
}

RsDataset scale_dataset(const RsDataset& ds, int k) {
  if (k < 1) throw std::invalid_argument("scale factor must be >= 1");
  RsDataset out = ds;
  out.bin = ds.bin.scaled(k);
  out.scale = ds.scale * k;
  for (auto& seq : out.sequences)
    for (auto& it : seq) it = it.scaled(k);
  return out;
}

namespace {

json dims_json(int a, int b, int c) { return json::array({a, b, c}); }

ItemDims item_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

}  // namespace

void write_dataset(const RsDataset& ds, std::ostream& os) {
  json header = {{"format", "packer-dataset"},
                 {"version", kDatasetVersion},
                 {"generator", kDatasetGenerator},
                 {"seed", ds.seed},
                 {"scale", ds.scale},
                 {"bin", dims_json(ds.bin.L, ds.bin.W, ds.bin.H)},
                 {"count", ds.sequences.size()}};
  os << header.dump() << '\n';
  for (const auto& seq : ds.sequences) {
    json items = json::array();
    for (const auto& it : seq) items.push_back(dims_json(it.l, it.w, it.h));
    os << json{{"bin", dims_json(ds.bin.L, ds.bin.W, ds.bin.H)}, {"items", items}}.dump() << '\n';
  }
}

RsDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: missing header line");
  const json header = json::parse(line);
  if (header.value("format", "") != "packer-dataset") throw std::runtime_error("dataset: bad header");
  if (header.at("version").get<int>() != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version");
  RsDataset ds;
  const auto& b = header.at("bin");
  ds.bin = BinDims(b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>());
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.scale = header.value("scale", 1);
  const auto count = header.at("count").get<std::size_t>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    const auto& rb = row.at("bin");
    if (BinDims(rb.at(0).get<int>(), rb.at(1).get<int>(), rb.at(2).get<int>()) != ds.bin)
      throw std::runtime_error("dataset: row bin differs from header");
    std::vector<ItemDims> seq;
    for (const auto& it : row.at("items")) seq.push_back(item_from(it));
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.size() != count) throw std::runtime_error("dataset: row count differs from header");
  return ds;
}

void save_dataset(const RsDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(ds, os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

RsDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_dataset(is);
}

TypeSplit split_types(const std::vector<ItemDims>& all, int exclude, std::uint64_t seed) {
  if (exclude < 0 || exclude >= static_cast<int>(all.size()))
    throw std::invalid_argument("exclude count must be in [0, number of types)");
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `exclude` slots become the excluded set.
  for (std::size_t i = 0; i < static_cast<std::size_t>(exclude); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::uint8_t> excluded(all.size(), 0);
  for (int i = 0; i < exclude; ++i) excluded[idx[static_cast<std::size_t>(i)]] = 1;
  TypeSplit s;
  for (std::size_t i = 0; i < all.size(); ++i) (excluded[i] ? s.exc : s.sub).push_back(all[i]);
  return s;
}

std::string types_to_json(const std::vector<ItemDims>& types) {
  json arr = json::array();
  for (const auto& t : types) arr.push_back(dims_json(t.l, t.w, t.h));
  return json{{"types", arr}}.dump();
}

std::vector<ItemDims> types_from_json(const std::string& text) {
  const json j = json::parse(text);
  std::vector<ItemDims> out;
  for (const auto& t : j.at("types")) out.push_back(item_from(t));
  if (out.empty()) throw std::runtime_error("item type file is empty");
  return out;
}

std::vector<ItemDims> load_types(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return types_from_json(ss.str());
}

}  // namespace packer

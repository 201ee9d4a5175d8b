#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "packer/bin_core.hpp"

namespace packer {

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetGenerator = "rs-uniform";
inline constexpr int kDefaultSequenceLength = 100;

// Item sequences for evaluation. On disk: a JSON header line followed by one
// {"bin": [L,W,H], "items": [[l,w,h], ...]} object per line.
struct RsDataset {
  BinDims bin{10, 10, 10};
  std::uint64_t seed = 0;
  int scale = 1;  // > 1 when produced by scale_dataset
  std::vector<std::vector<ItemDims>> sequences;

  friend bool operator==(const RsDataset&, const RsDataset&) = default;
};

// `types` restricts draws to a subset of item types (uniform over the subset).
RsDataset generate_dataset(const BinDims& bin, int count, std::uint64_t seed,
                           int length = kDefaultSequenceLength,
                           const std::vector<ItemDims>* types = nullptr);

// Multiplies the bin and every item dimension by k.
RsDataset scale_dataset(const RsDataset& ds, int k);

void write_dataset(const RsDataset& ds, std::ostream& os);
RsDataset read_dataset(std::istream& is);
void save_dataset(const RsDataset& ds, const std::string& path);
RsDataset load_dataset(const std::string& path);

struct TypeSplit {
  std::vector<ItemDims> sub;
  std::vector<ItemDims> exc;
};

// Randomly removes `exclude` types from `all`; both halves keep `all`'s order.
TypeSplit split_types(const std::vector<ItemDims>& all, int exclude, std::uint64_t seed);

std::string types_to_json(const std::vector<ItemDims>& types);
std::vector<ItemDims> types_from_json(const std::string& text);
std::vector<ItemDims> load_types(const std::string& path);

}  // namespace packer

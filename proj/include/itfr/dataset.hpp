#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "itfr/common.hpp"

namespace itfr {

using Interaction = std::pair<int, int>;  // (user_index, item_index)

// Deduplicated implicit-feedback dataset with one group label per entity.
// External string ids are mapped to dense indices; the maps are kept for
// reporting and for writing split files back out.
struct InteractionDataset {
  int user_count = 0;
  int item_count = 0;
  int user_group_count = 0;
  int item_group_count = 0;
  std::vector<Interaction> positives;  // sorted by (user, item), unique
  std::vector<int> user_group_of;      // size user_count, values in [0, P)
  std::vector<int> item_group_of;      // size item_count, values in [0, Q)
  std::vector<std::string> user_ids;   // dense index -> external id
  std::vector<std::string> item_ids;
  std::vector<std::string> user_group_labels;  // group index -> label
  std::vector<std::string> item_group_labels;

  int cell_count() const { return user_group_count * item_group_count; }
  int cell_of(int user, int item) const {
    return user_group_of[user] * item_group_count + item_group_of[item];
  }
  void validate() const;  // throws DataError on any broken invariant
};

struct SplitDataset {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
};

// P x Q table of training positives; every training positive lands in the
// cell of its user group and its item group.
struct IntersectionalIndex {
  int user_group_count = 0;
  int item_group_count = 0;
  std::vector<std::vector<Interaction>> cells;  // row-major P x Q

  const std::vector<Interaction>& cell(int p, int q) const {
    return cells[p * item_group_count + q];
  }
};

// Per-user sorted item lists for one interaction set; answers membership
// queries during negative sampling and evaluation masking.
struct UserItems {
  std::vector<std::vector<int>> items;  // indexed by user, each sorted

  bool contains(int user, int item) const;
  int degree(int user) const { return static_cast<int>(items[user].size()); }
};

UserItems build_user_items(int user_count, const std::vector<Interaction>& interactions);

InteractionDataset load_dataset(const std::filesystem::path& interactions_path,
                                const std::filesystem::path& user_groups_path,
                                const std::filesystem::path& item_groups_path);

SplitDataset split_dataset(const InteractionDataset& ds, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

// Uniform draw over the items the user has NOT interacted with in `train_view`.
// Throws DataError when no negative exists.
int sample_negative(int user, int item_count, const UserItems& train_view, Rng& rng);

struct ToyConfig {
  int users_per_group = 100;
  int items_per_group = 50;
  int positives_per_user = 20;
  int majority_users_per_group = 90;  // the rest prefer the other genre
};

// Synthetic two-genre population: each user group has a majority that
// interacts only with its "own" genre and a minority that interacts only with
// the other one. Group labels follow the diagonal-preference structure.
InteractionDataset generate_toy(std::uint64_t seed, const ToyConfig& cfg = {});

IntersectionalIndex build_index(const InteractionDataset& ds,
                                const std::vector<Interaction>& train);

// TSV / sidecar round trip used by the CLI.
void write_dataset_tsv(const InteractionDataset& ds, const std::filesystem::path& dir);
void write_split_dir(const InteractionDataset& ds, const SplitDataset& split,
                     const std::filesystem::path& dir);
std::pair<InteractionDataset, SplitDataset> load_split_dir(const std::filesystem::path& dir);

}  // namespace itfr

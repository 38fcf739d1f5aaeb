#include "itfr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace itfr {

namespace {

using json = nlohmann::json;

struct GroupFile {
  std::vector<std::string> entity_ids;          // first-appearance order
  std::vector<int> group_of;                    // parallel to entity_ids
  std::vector<std::string> group_labels;        // first-appearance order of labels
  std::unordered_map<std::string, int> index_of;  // entity id -> dense index
};

// entity_id<TAB>group_label per line; group indices by first appearance of
// each label. An entity listed twice with different labels is an error.
GroupFile read_group_file(const std::filesystem::path& path, const char* entity_kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open group file: " + path.string());

  GroupFile gf;
  std::unordered_map<std::string, int> label_index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
    }
    const std::string id = line.substr(0, tab);
    const std::string label = line.substr(tab + 1);

    int g;
    if (auto it = label_index.find(label); it != label_index.end()) {
      g = it->second;
    } else {
      g = static_cast<int>(gf.group_labels.size());
      label_index.emplace(label, g);
      gf.group_labels.push_back(label);
    }

    if (auto it = gf.index_of.find(id); it != gf.index_of.end()) {
      if (gf.group_of[it->second] != g) {
        throw DataError(std::string(entity_kind) + " " + id + " has two different group labels");
      }
      continue;
    }
    gf.index_of.emplace(id, static_cast<int>(gf.entity_ids.size()));
    gf.entity_ids.push_back(id);
    gf.group_of.push_back(g);
  }
  return gf;
}

std::vector<Interaction> read_interactions_tsv(const std::filesystem::path& path,
                                               const GroupFile& users, const GroupFile& items) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file: " + path.string());

  std::set<Interaction> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
    }
    const std::string uid = line.substr(0, tab);
    const std::string iid = line.substr(tab + 1);

    const auto uit = users.index_of.find(uid);
    if (uit == users.index_of.end()) throw DataError("user " + uid + " has no group label");
    const auto iit = items.index_of.find(iid);
    if (iit == items.index_of.end()) throw DataError("item " + iid + " has no group label");
    seen.emplace(uit->second, iit->second);
  }
  return {seen.begin(), seen.end()};  // sorted, unique
}

}  // namespace

void InteractionDataset::validate() const {
  if (user_count < 1 || item_count < 1) throw DataError("empty entity universe");
  if (user_group_count < 1 || item_group_count < 1) throw DataError("no groups defined");
  if (static_cast<int>(user_group_of.size()) != user_count ||
      static_cast<int>(item_group_of.size()) != item_count) {
    throw DataError("group label vector size mismatch");
  }
  for (int g : user_group_of)
    if (g < 0 || g >= user_group_count) throw DataError("user group index out of range");
  for (int g : item_group_of)
    if (g < 0 || g >= item_group_count) throw DataError("item group index out of range");
  for (std::size_t k = 0; k < positives.size(); ++k) {
    const auto& [u, i] = positives[k];
    if (u < 0 || u >= user_count || i < 0 || i >= item_count) {
      throw DataError("interaction references unknown entity");
    }
    if (k > 0 && positives[k] <= positives[k - 1]) throw DataError("positives not sorted/unique");
  }
}

bool UserItems::contains(int user, int item) const {
  const auto& v = items[user];
  return std::binary_search(v.begin(), v.end(), item);
}

UserItems build_user_items(int user_count, const std::vector<Interaction>& interactions) {
  UserItems ui;
  ui.items.resize(user_count);
  for (const auto& [u, i] : interactions) ui.items[u].push_back(i);
  for (auto& v : ui.items) std::sort(v.begin(), v.end());
  return ui;
}

InteractionDataset load_dataset(const std::filesystem::path& interactions_path,
                                const std::filesystem::path& user_groups_path,
                                const std::filesystem::path& item_groups_path) {
  const GroupFile users = read_group_file(user_groups_path, "user");
  const GroupFile items = read_group_file(item_groups_path, "item");
  if (users.entity_ids.empty()) throw DataError("user group file lists no users");
  if (items.entity_ids.empty()) throw DataError("item group file lists no items");

  InteractionDataset ds;
  ds.user_count = static_cast<int>(users.entity_ids.size());
  ds.item_count = static_cast<int>(items.entity_ids.size());
  ds.user_group_count = static_cast<int>(users.group_labels.size());
  ds.item_group_count = static_cast<int>(items.group_labels.size());
  ds.user_group_of = users.group_of;
  ds.item_group_of = items.group_of;
  ds.user_ids = users.entity_ids;
  ds.item_ids = items.entity_ids;
  ds.user_group_labels = users.group_labels;
  ds.item_group_labels = items.group_labels;
  ds.positives = read_interactions_tsv(interactions_path, users, items);
  ds.validate();
  return ds;
}

SplitDataset split_dataset(const InteractionDataset& ds, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  for (double r : ratios)
    if (r < 0.0) throw UsageError("split ratios must be non-negative");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");

  const std::size_t total = ds.positives.size();
  if (total < 3 && ratios[0] > 0.0 && ratios[1] > 0.0 && ratios[2] > 0.0) {
    throw DataError("dataset too small to split");
  }

  std::vector<Interaction> perm = ds.positives;  // canonical sorted order, then shuffled
  Rng rng(seed);
  seeded_shuffle(perm, rng);

  // floor(r * |D|) with a guard against the ratio's decimal representation
  // landing a hair below the exact rational product.
  const auto cut_at = [total](double r) {
    return std::min(total, static_cast<std::size_t>(
                               std::floor(r * static_cast<double>(total) + 1e-6)));
  };
  const std::size_t cut1 = cut_at(ratios[0]);
  const std::size_t cut2 = std::max(cut1, cut_at(ratios[0] + ratios[1]));

  SplitDataset split;
  split.seed = seed;
  split.ratios = ratios;
  split.train.assign(perm.begin(), perm.begin() + cut1);
  split.validation.assign(perm.begin() + cut1, perm.begin() + cut2);
  split.test.assign(perm.begin() + cut2, perm.end());
  return split;
}

int sample_negative(int user, int item_count, const UserItems& train_view, Rng& rng) {
  if (train_view.degree(user) >= item_count) {
    throw DataError("no negative available for user " + std::to_string(user));
  }
  for (;;) {
    const int j = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(item_count)));
    if (!train_view.contains(user, j)) return j;
  }
}

InteractionDataset generate_toy(std::uint64_t seed, const ToyConfig& cfg) {
  const int users_per_group = cfg.users_per_group;
  const int items_per_group = cfg.items_per_group;
  const int positives_per_user = std::min(cfg.positives_per_user, cfg.items_per_group);
  const int majority = std::min(cfg.majority_users_per_group, users_per_group);

  InteractionDataset ds;
  ds.user_count = 2 * users_per_group;
  ds.item_count = 2 * items_per_group;
  ds.user_group_count = 2;
  ds.item_group_count = 2;
  ds.user_group_labels = {"male", "female"};
  ds.item_group_labels = {"horror", "romance"};

  ds.user_group_of.resize(ds.user_count);
  ds.item_group_of.resize(ds.item_count);
  ds.user_ids.resize(ds.user_count);
  ds.item_ids.resize(ds.item_count);
  char buf[16];
  for (int u = 0; u < ds.user_count; ++u) {
    ds.user_group_of[u] = u / users_per_group;
    std::snprintf(buf, sizeof(buf), "u%04d", u);
    ds.user_ids[u] = buf;
  }
  for (int i = 0; i < ds.item_count; ++i) {
    ds.item_group_of[i] = i / items_per_group;
    std::snprintf(buf, sizeof(buf), "i%04d", i);
    ds.item_ids[i] = buf;
  }

  Rng rng(seed);
  std::vector<int> pool(items_per_group);
  std::set<Interaction> positives;
  for (int u = 0; u < ds.user_count; ++u) {
    const int user_group = ds.user_group_of[u];
    const bool is_majority = (u % users_per_group) < majority;
    // Diagonal preference: majority users stick to their own genre.
    const int genre = is_majority ? user_group : 1 - user_group;
    const int base = genre * items_per_group;
    for (int k = 0; k < items_per_group; ++k) pool[k] = base + k;
    // Partial Fisher-Yates: the first positives_per_user entries are a
    // uniform draw without replacement.
    for (int k = 0; k < positives_per_user; ++k) {
      const int j = k + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(items_per_group - k)));
      std::swap(pool[k], pool[j]);
      positives.emplace(u, pool[k]);
    }
  }
  ds.positives.assign(positives.begin(), positives.end());
  ds.validate();
  return ds;
}

IntersectionalIndex build_index(const InteractionDataset& ds,
                                const std::vector<Interaction>& train) {
  IntersectionalIndex idx;
  idx.user_group_count = ds.user_group_count;
  idx.item_group_count = ds.item_group_count;
  idx.cells.resize(static_cast<std::size_t>(ds.cell_count()));
  for (const auto& [u, i] : train) idx.cells[ds.cell_of(u, i)].emplace_back(u, i);
  return idx;
}

namespace {

void write_interactions(const InteractionDataset& ds, const std::vector<Interaction>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [u, i] : rows) out << ds.user_ids[u] << '\t' << ds.item_ids[i] << '\n';
}

void write_groups(const std::vector<std::string>& ids, const std::vector<int>& group_of,
                  const std::vector<std::string>& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t k = 0; k < ids.size(); ++k) out << ids[k] << '\t' << labels[group_of[k]] << '\n';
}

}  // namespace

void write_dataset_tsv(const InteractionDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_interactions(ds, ds.positives, dir / "interactions.tsv");
  write_groups(ds.user_ids, ds.user_group_of, ds.user_group_labels, dir / "user_groups.tsv");
  write_groups(ds.item_ids, ds.item_group_of, ds.item_group_labels, dir / "item_groups.tsv");
}

void write_split_dir(const InteractionDataset& ds, const SplitDataset& split,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_interactions(ds, split.train, dir / "train.tsv");
  write_interactions(ds, split.validation, dir / "validation.tsv");
  write_interactions(ds, split.test, dir / "test.tsv");
  write_groups(ds.user_ids, ds.user_group_of, ds.user_group_labels, dir / "user_groups.tsv");
  write_groups(ds.item_ids, ds.item_group_of, ds.item_group_labels, dir / "item_groups.tsv");

  json sidecar;
  sidecar["seed"] = split.seed;
  sidecar["ratios"] = split.ratios;
  sidecar["user_ids"] = ds.user_ids;
  sidecar["item_ids"] = ds.item_ids;
  sidecar["user_group_labels"] = ds.user_group_labels;
  sidecar["item_group_labels"] = ds.item_group_labels;
  sidecar["counts"] = {{"train", split.train.size()},
                       {"validation", split.validation.size()},
                       {"test", split.test.size()}};
  std::ofstream out(dir / "split.json");
  if (!out) throw DataError("cannot write " + (dir / "split.json").string());
  out << sidecar.dump(2) << '\n';
}

std::pair<InteractionDataset, SplitDataset> load_split_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "split.json");
  if (!in) throw DataError("missing split sidecar: " + (dir / "split.json").string());
  json sidecar = json::parse(in);

  const GroupFile users = read_group_file(dir / "user_groups.tsv", "user");
  const GroupFile items = read_group_file(dir / "item_groups.tsv", "item");

  InteractionDataset ds;
  ds.user_ids = sidecar.at("user_ids").get<std::vector<std::string>>();
  ds.item_ids = sidecar.at("item_ids").get<std::vector<std::string>>();
  ds.user_group_labels = sidecar.at("user_group_labels").get<std::vector<std::string>>();
  ds.item_group_labels = sidecar.at("item_group_labels").get<std::vector<std::string>>();
  ds.user_count = static_cast<int>(ds.user_ids.size());
  ds.item_count = static_cast<int>(ds.item_ids.size());
  ds.user_group_count = static_cast<int>(ds.user_group_labels.size());
  ds.item_group_count = static_cast<int>(ds.item_group_labels.size());

  // Sidecar id order is authoritative; group files must agree entity-wise.
  auto map_groups = [](const GroupFile& gf, const std::vector<std::string>& ids,
                       const std::vector<std::string>& labels, const char* kind) {
    std::unordered_map<std::string, int> label_index;
    for (std::size_t g = 0; g < labels.size(); ++g) label_index[labels[g]] = static_cast<int>(g);
    std::vector<int> group_of(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto it = gf.index_of.find(ids[k]);
      if (it == gf.index_of.end())
        throw DataError(std::string(kind) + " " + ids[k] + " has no group label");
      const auto lit = label_index.find(gf.group_labels[gf.group_of[it->second]]);
      if (lit == label_index.end())
        throw DataError(std::string(kind) + " group label not in sidecar: " + ids[k]);
      group_of[k] = lit->second;
    }
    return group_of;
  };
  ds.user_group_of = map_groups(users, ds.user_ids, ds.user_group_labels, "user");
  ds.item_group_of = map_groups(items, ds.item_ids, ds.item_group_labels, "item");

  std::unordered_map<std::string, int> uindex, iindex;
  for (int u = 0; u < ds.user_count; ++u) uindex[ds.user_ids[u]] = u;
  for (int i = 0; i < ds.item_count; ++i) iindex[ds.item_ids[i]] = i;

  auto read_rows = [&](const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<Interaction> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
      const auto uit = uindex.find(line.substr(0, tab));
      const auto iit = iindex.find(line.substr(tab + 1));
      if (uit == uindex.end() || iit == iindex.end())
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown entity");
      rows.emplace_back(uit->second, iit->second);
    }
    return rows;
  };

  SplitDataset split;
  split.seed = sidecar.at("seed").get<std::uint64_t>();
  const auto r = sidecar.at("ratios").get<std::vector<double>>();
  if (r.size() == 3) split.ratios = {r[0], r[1], r[2]};
  split.train = read_rows(dir / "train.tsv");
  split.validation = read_rows(dir / "validation.tsv");
  split.test = read_rows(dir / "test.tsv");

  ds.positives.reserve(split.train.size() + split.validation.size() + split.test.size());
  for (const auto* part : {&split.train, &split.validation, &split.test})
    ds.positives.insert(ds.positives.end(), part->begin(), part->end());
  std::sort(ds.positives.begin(), ds.positives.end());
  ds.positives.erase(std::unique(ds.positives.begin(), ds.positives.end()), ds.positives.end());
  ds.validate();
  return {std::move(ds), std::move(split)};
}

}  // namespace itfr

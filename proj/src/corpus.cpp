#include "promolab/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "promolab/common.h"

namespace promolab {

using nlohmann::json;

Catalog::Catalog(std::vector<Item> items) {
  for (auto& item : items) add(std::move(item));
}

void Catalog::add(Item item) {
  if (item.title.empty()) throw IngestError("item '" + item.item_id + "' has an empty title");
  if (index_.count(item.item_id)) throw IngestError("duplicate item_id '" + item.item_id + "'");
  index_.emplace(item.item_id, items_.size());
  items_.push_back(std::move(item));
}

std::optional<std::size_t> Catalog::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Catalog::index_of(std::string_view id) const {
  auto idx = find(id);
  if (!idx) throw ConfigError("unknown item_id '" + std::string(id) + "'");
  return *idx;
}

Catalog Catalog::with_titles(const std::map<std::string, std::string>& overlay) const {
  Catalog out = *this;
  for (const auto& [id, title] : overlay) {
    if (title.empty()) throw ConfigError("overlay title for '" + id + "' is empty");
    out.items_[index_of(id)].title = title;
  }
  return out;
}

std::string_view to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::full: return "full";
    case DatasetRole::observable: return "observable";
    case DatasetRole::synthetic: return "synthetic";
    case DatasetRole::surrogate_train: return "surrogate_train";
    case DatasetRole::poison: return "poison";
  }
  return "unknown";
}

Dataset::Dataset(std::shared_ptr<const Catalog> catalog, std::vector<InteractionSequence> sequences,
                 DatasetRole role)
    : catalog_(std::move(catalog)), sequences_(std::move(sequences)), role_(role) {
  if (!catalog_) throw ConfigError("dataset requires a catalog");
  std::unordered_set<std::string> users;
  for (const auto& seq : sequences_) {
    if (!users.insert(seq.user_id).second) throw IngestError("duplicate user_id '" + seq.user_id + "'");
    if (seq.items.empty()) throw IngestError("user '" + seq.user_id + "' has an empty sequence");
    for (const auto& id : seq.items) {
      if (!catalog_->contains(id)) {
        throw IngestError("user '" + seq.user_id + "' references unknown item '" + id + "'");
      }
    }
  }
}

std::size_t Dataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& seq : sequences_) n += seq.items.size();
  return n;
}

double Dataset::mean_length() const {
  if (sequences_.empty()) return 0.0;
  return static_cast<double>(num_interactions()) / static_cast<double>(sequences_.size());
}

std::string Dataset::fingerprint() const { return promolab::fingerprint(*catalog_, sequences_); }

std::string fingerprint(const Catalog& catalog, const std::vector<InteractionSequence>& sequences) {
  std::uint64_t h = fnv1a64("promolab-dataset-v1");
  const std::string_view unit("\x1f", 1), record("\x1e", 1);
  for (const auto& item : catalog.items()) {
    h = fnv1a64(item.item_id, h);
    h = fnv1a64(unit, h);
    h = fnv1a64(item.title, h);
    h = fnv1a64(record, h);
  }
  for (const auto& seq : sequences) {
    h = fnv1a64(seq.user_id, h);
    for (const auto& id : seq.items) {
      h = fnv1a64(unit, h);
      h = fnv1a64(id, h);
    }
    h = fnv1a64(record, h);
  }
  return to_hex(h);
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Catalog load_catalog(const std::filesystem::path& path) {
  auto in = open_input(path);
  Catalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    std::string id, title;
    try {
      json record = json::parse(line);
      id = record.at("item_id").get<std::string>();
      title = record.at("title").get<std::string>();
    } catch (const json::exception& e) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": malformed catalog record (" +
                        e.what() + ")");
    }
    if (catalog.contains(id)) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": duplicate item_id '" + id + "'");
    }
    if (title.empty()) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": empty title for '" + id + "'");
    }
    catalog.add({std::move(id), std::move(title)});
  }
  return catalog;
}

Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const Catalog> catalog) {
  auto in = open_input(path);
  std::vector<InteractionSequence> sequences;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    InteractionSequence seq;
    try {
      json record = json::parse(line);
      seq.user_id = record.at("user_id").get<std::string>();
      seq.items = record.at("item_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": malformed interaction record (" +
                        e.what() + ")");
    }
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (!seen.insert(seq.user_id).second) {
      throw IngestError(where + "user '" + seq.user_id + "' appears in more than one record");
    }
    if (seq.items.empty()) throw IngestError(where + "user '" + seq.user_id + "' has no items");
    for (const auto& id : seq.items) {
      if (!catalog->contains(id)) {
        throw IngestError(where + "user '" + seq.user_id + "' references unknown item '" + id + "'");
      }
    }
    sequences.push_back(std::move(seq));
  }
  return Dataset(std::move(catalog), std::move(sequences), DatasetRole::full);
}

void write_catalog_items(const std::filesystem::path& path, const std::vector<Item>& items) {
  auto out = open_output(path);
  for (const auto& item : items) {
    out << json{{"item_id", item.item_id}, {"title", item.title}}.dump() << '\n';
  }
}

void write_catalog(const std::filesystem::path& path, const Catalog& catalog) {
  write_catalog_items(path, catalog.items());
}

void write_sequences(const std::filesystem::path& path, const std::vector<InteractionSequence>& sequences) {
  auto out = open_output(path);
  for (const auto& seq : sequences) {
    out << json{{"user_id", seq.user_id}, {"item_ids", seq.items}}.dump() << '\n';
  }
}

void write_interactions(const std::filesystem::path& path, const Dataset& dataset) {
  write_sequences(path, dataset.sequences());
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Dataset truncate(const Dataset& dataset, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("truncation length must be positive");
  std::vector<InteractionSequence> out;
  out.reserve(dataset.num_users());
  for (const auto& seq : dataset.sequences()) {
    InteractionSequence copy = seq;
    if (copy.items.size() > max_len) {
      copy.items.erase(copy.items.begin(), copy.items.end() - static_cast<std::ptrdiff_t>(max_len));
    }
    out.push_back(std::move(copy));
  }
  return Dataset(dataset.catalog_ptr(), std::move(out), dataset.role());
}

Dataset k_core_filter(const Dataset& dataset, std::size_t k) {
  if (k == 0) throw ConfigError("k_core_filter requires k >= 1");
  std::vector<InteractionSequence> seqs = dataset.sequences();
  std::set<std::string> alive;
  for (const auto& item : dataset.catalog().items()) alive.insert(item.item_id);

  bool changed = true;
  while (changed) {
    changed = false;
    std::map<std::string, std::size_t> counts;
    for (const auto& id : alive) counts[id] = 0;
    for (const auto& seq : seqs) {
      for (const auto& id : seq.items) ++counts[id];
    }
    for (const auto& [id, n] : counts) {
      if (n < k) {
        alive.erase(id);
        changed = true;
      }
    }
    if (changed) {
      for (auto& seq : seqs) {
        std::erase_if(seq.items, [&](const std::string& id) { return !alive.count(id); });
      }
    }
    std::size_t before = seqs.size();
    std::erase_if(seqs, [&](const InteractionSequence& s) { return s.items.size() < k; });
    if (seqs.size() != before) changed = true;
  }

  auto catalog = std::make_shared<Catalog>();
  for (const auto& item : dataset.catalog().items()) {
    if (alive.count(item.item_id)) catalog->add(item);
  }
  return Dataset(std::move(catalog), std::move(seqs), dataset.role());
}

Split split_leave_last_two(const Dataset& dataset) {
  Split split;
  split.users.reserve(dataset.num_users());
  for (const auto& seq : dataset.sequences()) {
    UserSplit user{seq.user_id, seq.items, std::nullopt, std::nullopt};
    if (seq.items.size() >= 3) {
      user.test = user.train.back();
      user.train.pop_back();
      user.valid = user.train.back();
      user.train.pop_back();
    } else {
      ++split.train_only;
    }
    split.users.push_back(std::move(user));
  }
  return split;
}

Dataset training_view(const Dataset& dataset) {
  std::vector<InteractionSequence> out;
  out.reserve(dataset.num_users());
  for (const auto& seq : dataset.sequences()) {
    InteractionSequence copy = seq;
    if (copy.items.size() >= 3) copy.items.pop_back();
    out.push_back(std::move(copy));
  }
  return Dataset(dataset.catalog_ptr(), std::move(out), dataset.role());
}

Dataset sample_observable(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("observable ratio must be in (0, 1], got " + std::to_string(ratio));
  }
  const std::size_t n = dataset.num_users();
  const std::size_t keep = std::min(n, ceil_fraction(ratio, n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x0b5e7));
  rng.shuffle(order);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<InteractionSequence> out;
  out.reserve(keep);
  for (std::size_t idx : order) out.push_back(dataset.sequences()[idx]);
  return Dataset(dataset.catalog_ptr(), std::move(out), DatasetRole::observable);
}

// ---------------------------------------------------------------------------
// Popularity
// ---------------------------------------------------------------------------

PopularityTable::PopularityTable(const Catalog& catalog, const std::vector<InteractionSequence>& sequences) {
  for (const auto& item : catalog.items()) counts_[item.item_id] = 0;
  for (const auto& seq : sequences) {
    for (const auto& id : seq.items) {
      auto it = counts_.find(id);
      if (it == counts_.end()) throw ConfigError("sequence references unknown item '" + id + "'");
      ++it->second;
      ++total_;
    }
  }
  ranking_.reserve(counts_.size());
  for (const auto& [id, n] : counts_) ranking_.push_back(id);
  std::stable_sort(ranking_.begin(), ranking_.end(), [&](const std::string& a, const std::string& b) {
    return counts_.find(a)->second > counts_.find(b)->second;
  });
}

std::uint64_t PopularityTable::count(std::string_view id) const {
  auto it = counts_.find(id);
  return it == counts_.end() ? 0 : it->second;
}

PopularityTable popularity(const Dataset& dataset) {
  return PopularityTable(dataset.catalog(), dataset.sequences());
}

std::vector<std::string> top_fraction(const PopularityTable& table, double f) {
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError("top_fraction requires f in (0, 1]");
  std::size_t n = std::min(table.ranking().size(), ceil_fraction(f, table.ranking().size()));
  return {table.ranking().begin(), table.ranking().begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<std::string> select_targets(const Dataset& dataset, std::size_t n) {
  if (n > dataset.catalog().size()) {
    throw ConfigError("cannot select " + std::to_string(n) + " targets from a catalog of " +
                      std::to_string(dataset.catalog().size()));
  }
  PopularityTable table = popularity(dataset);
  std::vector<std::string> ids = table.ranking();
  std::stable_sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    auto ca = table.count(a), cb = table.count(b);
    if (ca != cb) return ca < cb;
    return a < b;
  });
  ids.resize(n);
  return ids;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

const char* const kOnsets[] = {"b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "st"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "eo"};

std::string make_word(Rng& rng) {
  std::string w;
  std::size_t syllables = 2 + rng.index(2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kOnsets[rng.index(std::size(kOnsets))];
    w += kVowels[rng.index(std::size(kVowels))];
  }
  if (rng.index(2) == 0) w += "n";
  return w;
}

std::string capitalize(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string zero_pad(const char* prefix, std::size_t value, std::size_t width) {
  std::string digits = std::to_string(value);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

class WeightedPicker {
 public:
  explicit WeightedPicker(const std::vector<double>& weights) : cumulative_(weights.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      cumulative_[i] = acc;
    }
  }
  std::size_t pick(Rng& rng) const {
    double x = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace

Dataset synth_generate(const SynthConfig& config) {
  if (config.n_items == 0 || config.vocab == 0 || config.n_genres == 0 || config.min_len == 0 ||
      config.max_len < config.min_len) {
    throw ConfigError("synth_generate requires positive sizes and min_len <= max_len");
  }
  Rng rng(derive_seed(config.seed, 0x5e17));

  // Vocabulary of distinct pseudo-words, partitioned into roles.
  std::vector<std::string> vocab;
  std::unordered_set<std::string> used;
  const std::size_t vocab_size = std::max<std::size_t>(config.vocab, 4 * config.n_genres + 24);
  while (vocab.size() < vocab_size) {
    std::string w = make_word(rng);
    if (used.insert(w).second) vocab.push_back(std::move(w));
  }
  std::size_t cursor = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::string> out(vocab.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 vocab.begin() + static_cast<std::ptrdiff_t>(cursor + n));
    cursor += n;
    return out;
  };
  const std::size_t n_style = 12;
  const std::vector<std::string> style = take(n_style);  // first third reads as "premium" style
  const std::size_t n_heads = 2 * config.n_genres;
  const std::vector<std::string> heads = take(n_heads);
  const std::size_t remaining = vocab_size - cursor;
  const std::size_t n_brands = std::max<std::size_t>(4, remaining / 4);
  const std::vector<std::string> brands = take(n_brands);
  const std::vector<std::string> descriptors = take(vocab_size - cursor);
  const std::size_t per_genre = std::max<std::size_t>(1, descriptors.size() / config.n_genres);

  // Item popularity: Zipf over a random permutation of ranks.
  std::vector<std::size_t> rank(config.n_items);
  std::iota(rank.begin(), rank.end(), 0);
  rng.shuffle(rank);
  std::vector<double> pop_weight(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    pop_weight[i] = 1.0 / std::pow(static_cast<double>(rank[i] + 1), config.popularity_skew);
  }

  auto catalog = std::make_shared<Catalog>();
  std::vector<std::size_t> genre(config.n_items);
  const std::size_t id_width = std::to_string(config.n_items).size() + 1;
  for (std::size_t i = 0; i < config.n_items; ++i) {
    genre[i] = rng.index(config.n_genres);
    const double percentile = 1.0 - static_cast<double>(rank[i]) / static_cast<double>(config.n_items);
    std::vector<std::string> words;
    words.push_back(capitalize(brands[rng.index(brands.size())]));
    if (rng.uniform() < 0.15 + 0.7 * percentile) words.push_back(style[rng.index(n_style / 3)]);
    std::size_t n_desc = 2 + rng.index(3);
    const std::size_t base = genre[i] * per_genre;
    for (std::size_t d = 0; d < n_desc; ++d) {
      const std::string& w = descriptors[(base + rng.index(per_genre)) % descriptors.size()];
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
    if (rng.uniform() < 0.5) words.push_back(style[n_style / 3 + rng.index(n_style - n_style / 3)]);
    words.push_back(capitalize(heads[2 * genre[i] + rng.index(2)]));
    std::string title;
    for (const auto& w : words) {
      if (!title.empty()) title += ' ';
      title += w;
    }
    catalog->add({zero_pad("i", i, id_width), title});
  }

  // Per-genre pickers and successor lists give first-order structure.
  WeightedPicker global(pop_weight);
  std::vector<std::vector<std::size_t>> members(config.n_genres);
  for (std::size_t i = 0; i < config.n_items; ++i) members[genre[i]].push_back(i);
  std::vector<WeightedPicker> by_genre;
  for (const auto& m : members) {
    std::vector<double> w;
    for (std::size_t i : m) w.push_back(pop_weight[i]);
    if (w.empty()) w.push_back(1.0);
    by_genre.emplace_back(w);
  }
  auto pick_in_genre = [&](std::size_t g, Rng& r) -> std::size_t {
    if (members[g].empty()) return global.pick(r);
    return members[g][by_genre[g].pick(r)];
  };
  std::vector<std::vector<std::size_t>> successors(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    for (int s = 0; s < 4; ++s) {
      std::size_t j = rng.uniform() < 0.75 ? pick_in_genre(genre[i], rng) : global.pick(rng);
      if (j != i) successors[i].push_back(j);
    }
  }

  std::vector<InteractionSequence> sequences;
  sequences.reserve(config.n_users);
  const std::size_t user_width = std::to_string(config.n_users).size() + 1;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng urng(derive_seed(config.seed, 0x05e5, u));
    std::size_t len = config.min_len + urng.index(config.max_len - config.min_len + 1);
    len = std::min(len, config.n_items);
    std::vector<std::size_t> items;
    std::unordered_set<std::size_t> seen;
    std::size_t current = global.pick(urng);
    items.push_back(current);
    seen.insert(current);
    while (items.size() < len) {
      std::size_t next = current;
      for (int attempt = 0; attempt < 20 && seen.count(next); ++attempt) {
        double x = urng.uniform();
        if (x < config.locality && !successors[current].empty()) {
          next = successors[current][urng.index(successors[current].size())];
        } else if (x < config.locality + config.genre_stickiness) {
          next = pick_in_genre(genre[current], urng);
        } else {
          next = global.pick(urng);
        }
      }
      if (seen.count(next)) {
        for (std::size_t j = 0; j < config.n_items; ++j) {
          std::size_t cand = (next + j) % config.n_items;
          if (!seen.count(cand)) {
            next = cand;
            break;
          }
        }
      }
      items.push_back(next);
      seen.insert(next);
      current = next;
    }
    InteractionSequence seq{zero_pad("u", u, user_width), {}};
    for (std::size_t i : items) seq.items.push_back(catalog->at(i).item_id);
    sequences.push_back(std::move(seq));
  }
  return Dataset(std::move(catalog), std::move(sequences), DatasetRole::full);
}

}  // namespace promolab

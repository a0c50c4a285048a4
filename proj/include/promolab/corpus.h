#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace promolab {

struct Item {
  std::string item_id;
  std::string title;
};

/// Item catalog. Insertion order defines the dense item index used by the
/// scoring code; ids are unique and titles non-empty.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<Item> items);

  /// Throws IngestError on a duplicate id or empty title.
  void add(Item item);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  bool contains(std::string_view id) const { return find(id).has_value(); }
  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws ConfigError for unknown ids.
  std::size_t index_of(std::string_view id) const;
  const Item& at(std::size_t index) const { return items_.at(index); }
  const std::string& title_of(std::string_view id) const { return items_[index_of(id)].title; }
  const std::vector<Item>& items() const { return items_; }

  /// Copy with some titles replaced. Unknown ids in the overlay are an error.
  Catalog with_titles(const std::map<std::string, std::string>& overlay) const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct InteractionSequence {
  std::string user_id;
  std::vector<std::string> items;  // chronological

  bool operator==(const InteractionSequence&) const = default;
};

enum class DatasetRole { full, observable, synthetic, surrogate_train, poison };

std::string_view to_string(DatasetRole role);

/// Immutable collection of user sequences over a shared catalog.
class Dataset {
 public:
  /// Validates: unique user ids, non-empty sequences, all items in catalog.
  Dataset(std::shared_ptr<const Catalog> catalog, std::vector<InteractionSequence> sequences,
          DatasetRole role = DatasetRole::full);

  const Catalog& catalog() const { return *catalog_; }
  const std::shared_ptr<const Catalog>& catalog_ptr() const { return catalog_; }
  const std::vector<InteractionSequence>& sequences() const { return sequences_; }
  DatasetRole role() const { return role_; }
  std::size_t num_users() const { return sequences_.size(); }
  std::size_t num_interactions() const;
  double mean_length() const;

  /// Stable hash over catalog and sequences (hex).
  std::string fingerprint() const;

 private:
  std::shared_ptr<const Catalog> catalog_;
  std::vector<InteractionSequence> sequences_;
  DatasetRole role_;
};

// ---------------------------------------------------------------------------
// Ingestion (JSONL)
// ---------------------------------------------------------------------------

Catalog load_catalog(const std::filesystem::path& path);
Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const Catalog> catalog);

void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
/// Write only the listed items (catalog overlay files).
void write_catalog_items(const std::filesystem::path& path, const std::vector<Item>& items);
void write_interactions(const std::filesystem::path& path, const Dataset& dataset);
void write_sequences(const std::filesystem::path& path, const std::vector<InteractionSequence>& sequences);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Keep the most recent `max_len` items of every sequence.
Dataset truncate(const Dataset& dataset, std::size_t max_len);

/// Iteratively drop users and items with fewer than k interactions until a
/// fixpoint. Removed items also leave the catalog.
Dataset k_core_filter(const Dataset& dataset, std::size_t k = 5);

struct UserSplit {
  std::string user_id;
  std::vector<std::string> train;
  std::optional<std::string> valid;
  std::optional<std::string> test;

  bool evaluable() const { return valid.has_value() && test.has_value(); }
};

struct Split {
  std::vector<UserSplit> users;
  std::size_t train_only = 0;  // users too short for valid/test
};

Split split_leave_last_two(const Dataset& dataset);

/// Sequences as the platform sees them before the held-out test item exists:
/// evaluable users lose their last item, short users are kept whole.
Dataset training_view(const Dataset& dataset);

/// Uniform user-level sample of ceil(ratio * N) users, original order kept.
Dataset sample_observable(const Dataset& dataset, double ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Popularity and targets
// ---------------------------------------------------------------------------

class PopularityTable {
 public:
  PopularityTable(const Catalog& catalog, const std::vector<InteractionSequence>& sequences);

  std::uint64_t count(std::string_view id) const;
  std::uint64_t total() const { return total_; }
  const std::map<std::string, std::uint64_t, std::less<>>& counts() const { return counts_; }
  /// Descending count, ties by ascending item id.
  const std::vector<std::string>& ranking() const { return ranking_; }

 private:
  std::map<std::string, std::uint64_t, std::less<>> counts_;
  std::vector<std::string> ranking_;
  std::uint64_t total_ = 0;
};

PopularityTable popularity(const Dataset& dataset);

/// Stable hash (hex) over a catalog and a list of sequences.
std::string fingerprint(const Catalog& catalog, const std::vector<InteractionSequence>& sequences);

/// The ceil(f * |catalog|) most popular items, in ranking order.
std::vector<std::string> top_fraction(const PopularityTable& table, double f);

/// The n least popular items, ties by ascending item id.
std::vector<std::string> select_targets(const Dataset& dataset, std::size_t n = 5);

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t n_users = 1000;
  std::size_t n_items = 300;
  std::size_t min_len = 6;
  std::size_t max_len = 14;
  std::size_t vocab = 400;
  std::size_t n_genres = 8;
  double popularity_skew = 0.9;  // Zipf exponent of item popularity
  double locality = 0.55;        // probability of following an item's successor list
  double genre_stickiness = 0.25;
  std::uint64_t seed = 1;
};

/// Seeded catalog with genre-clustered titles and users drawn from a
/// first-order transition process.
Dataset synth_generate(const SynthConfig& config);

}  // namespace promolab

#pragma once

#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promolab/corpus.h"

namespace promolab {

class HttpJsonClient;

using TokenSet = std::set<std::string>;

/// Lowercase, split on non-alphanumeric runs, drop empties, dedup.
TokenSet tokenize(std::string_view text);

/// Same splitting as tokenize but keeps order and duplicates.
std::vector<std::string> token_list(std::string_view text);

/// Dense real vector with a cached L2 norm.
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<double> values);
  static Embedding zeros(std::size_t dim) { return Embedding(std::vector<double>(dim, 0.0)); }

  std::size_t dim() const { return values_.size(); }
  double norm() const { return norm_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Unit-norm copy; the zero vector stays zero.
  Embedding normalized() const;

  bool operator==(const Embedding& other) const { return values_ == other.values_; }

 private:
  std::vector<double> values_;
  double norm_ = 0.0;
};

/// dot(a,b)/(|a||b|), or 0 when either norm is 0. Throws ConfigError on a
/// dimension mismatch.
double cosine(const Embedding& a, const Embedding& b);

/// Jaccard similarity of token sets; two empty sets count as identical.
double lexical_sim(std::string_view a, std::string_view b);

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual Embedding embed(std::string_view text) const = 0;
  virtual std::vector<Embedding> embed_batch(std::span<const std::string> texts) const;
};

/// Signed feature hashing of unigrams and bigrams, L2-normalized.
class HashingEmbedder final : public TextEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 256) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  Embedding embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

/// Embedding service client: POST {model, input:[texts]} -> {vectors:[[...]]}.
class RemoteEmbedder final : public TextEmbedder {
 public:
  RemoteEmbedder(std::shared_ptr<HttpJsonClient> client, std::string model, std::size_t dim,
                 std::string path = "/embeddings");
  std::size_t dim() const override { return dim_; }
  Embedding embed(std::string_view text) const override;
  std::vector<Embedding> embed_batch(std::span<const std::string> texts) const override;

 private:
  std::shared_ptr<HttpJsonClient> client_;
  std::string model_;
  std::size_t dim_;
  std::string path_;
};

enum class SequenceEmbeddingMode { mean_of_titles, concatenated_titles };

/// Title embeddings for every catalog item, indexed like the catalog.
class TitleEmbeddings {
 public:
  TitleEmbeddings(const Catalog& catalog, const TextEmbedder& embedder);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  const Embedding& at(std::size_t index) const { return vectors_.at(index); }

 private:
  std::size_t dim_;
  std::vector<Embedding> vectors_;
};

/// Normalized mean of the title embeddings of `items`; zero for an empty span.
Embedding sequence_embedding(std::span<const std::string> items, const Catalog& catalog,
                             const TitleEmbeddings& titles);

/// Mode-aware variant; concatenated mode embeds the joined titles as one text.
Embedding sequence_embedding(std::span<const std::string> items, const Catalog& catalog,
                             const TextEmbedder& embedder,
                             SequenceEmbeddingMode mode = SequenceEmbeddingMode::mean_of_titles);

/// Normalized mean of per-sequence embeddings. Throws on an empty dataset.
Embedding avg_real_embedding(const Dataset& dataset, const TitleEmbeddings& titles);
Embedding avg_real_embedding(const Dataset& dataset, const TextEmbedder& embedder,
                             SequenceEmbeddingMode mode = SequenceEmbeddingMode::mean_of_titles);

/// Normalized arithmetic mean; zero vector for an empty input.
Embedding normalized_mean(std::span<const Embedding> vectors, std::size_t dim);

}  // namespace promolab

#include "promolab/textops.h"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <json.hpp>

#include "promolab/common.h"
#include "promolab/http.h"

namespace promolab {

std::vector<std::string> token_list(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

TokenSet tokenize(std::string_view text) {
  auto tokens = token_list(text);
  return TokenSet(tokens.begin(), tokens.end());
}

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
  double sq = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v)) throw ConfigError("embedding entries must be finite");
    sq += v * v;
  }
  norm_ = std::sqrt(sq);
}

Embedding Embedding::normalized() const {
  if (norm_ == 0.0) return *this;
  std::vector<double> out(values_);
  for (double& v : out) v /= norm_;
  return Embedding(std::move(out));
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw ConfigError("cosine: dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  if (a.norm() == 0.0 || b.norm() == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

double lexical_sim(std::string_view a, std::string_view b) {
  // Lowercased copies with separators blanked; tokens are views into them.
  // Scratch buffers are reused because this runs in tight loops.
  thread_local std::string la, lb;
  thread_local std::vector<std::string_view> ta, tb;
  auto tokens_into = [](std::string_view text, std::string& buf, std::vector<std::string_view>& t) {
    buf.assign(text);
    for (char& c : buf) {
      if (c >= 'A' && c <= 'Z') {
        c = static_cast<char>(c - 'A' + 'a');
      } else if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) {
        c = ' ';
      }
    }
    t.clear();
    std::size_t i = 0;
    while (i < buf.size()) {
      while (i < buf.size() && buf[i] == ' ') ++i;
      std::size_t j = i;
      while (j < buf.size() && buf[j] != ' ') ++j;
      if (j > i) t.emplace_back(buf.data() + i, j - i);
      i = j;
    }
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
  };
  tokens_into(a, la, ta);
  tokens_into(b, lb, tb);
  if (ta.empty() && tb.empty()) return 1.0;
  std::size_t inter = 0;
  for (auto i = ta.begin(), j = tb.begin(); i != ta.end() && j != tb.end();) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter, ++i, ++j;
    }
  }
  std::size_t uni = ta.size() + tb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Embedding> TextEmbedder::embed_batch(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

Embedding HashingEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  auto add = [&](const std::string& feature) {
    std::uint64_t h = fnv1a64(feature);
    std::size_t bucket = static_cast<std::size_t>(h % dim_);
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  };
  auto tokens = token_list(text);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add("u:" + tokens[i]);
    if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1]);
  }
  return Embedding(std::move(v)).normalized();
}

RemoteEmbedder::RemoteEmbedder(std::shared_ptr<HttpJsonClient> client, std::string model, std::size_t dim,
                               std::string path)
    : client_(std::move(client)), model_(std::move(model)), dim_(dim), path_(std::move(path)) {}

Embedding RemoteEmbedder::embed(std::string_view text) const {
  std::string s(text);
  return embed_batch(std::span<const std::string>(&s, 1)).front();
}

std::vector<Embedding> RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
  nlohmann::json body{{"model", model_}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  nlohmann::json response = client_->post(path_, body);
  std::vector<std::vector<double>> raw;
  try {
    if (response.contains("vectors")) {
      raw = response.at("vectors").get<std::vector<std::vector<double>>>();
    } else {
      for (const auto& row : response.at("data")) raw.push_back(row.at("embedding").get<std::vector<double>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("embedding response malformed: ") + e.what());
  }
  if (raw.size() != texts.size()) {
    throw FormatError("embedding response has " + std::to_string(raw.size()) + " vectors for " +
                      std::to_string(texts.size()) + " inputs");
  }
  std::vector<Embedding> out;
  out.reserve(raw.size());
  for (auto& r : raw) {
    if (r.size() != dim_) {
      throw FormatError("embedding dimension " + std::to_string(r.size()) + " != configured " + std::to_string(dim_));
    }
    out.push_back(Embedding(std::move(r)).normalized());
  }
  return out;
}

TitleEmbeddings::TitleEmbeddings(const Catalog& catalog, const TextEmbedder& embedder) : dim_(embedder.dim()) {
  std::vector<std::string> titles;
  titles.reserve(catalog.size());
  for (const auto& item : catalog.items()) titles.push_back(item.title);
  vectors_ = embedder.embed_batch(titles);
}

Embedding normalized_mean(std::span<const Embedding> vectors, std::size_t dim) {
  std::vector<double> acc(dim, 0.0);
  if (vectors.empty()) return Embedding(std::move(acc));
  for (const auto& v : vectors) {
    if (v.dim() != dim) throw ConfigError("normalized_mean: dimension mismatch");
    for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i];
  }
  for (double& x : acc) x /= static_cast<double>(vectors.size());
  return Embedding(std::move(acc)).normalized();
}

Embedding sequence_embedding(std::span<const std::string> items, const Catalog& catalog,
                             const TitleEmbeddings& titles) {
  std::vector<double> acc(titles.dim(), 0.0);
  for (const auto& id : items) {
    const Embedding& e = titles.at(catalog.index_of(id));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
  }
  if (!items.empty()) {
    for (double& x : acc) x /= static_cast<double>(items.size());
  }
  return Embedding(std::move(acc)).normalized();
}

Embedding sequence_embedding(std::span<const std::string> items, const Catalog& catalog,
                             const TextEmbedder& embedder, SequenceEmbeddingMode mode) {
  if (mode == SequenceEmbeddingMode::concatenated_titles) {
    if (items.empty()) return Embedding::zeros(embedder.dim());
    std::string text;
    for (const auto& id : items) {
      if (!text.empty()) text += " | ";
      text += catalog.title_of(id);
    }
    return embedder.embed(text);
  }
  std::vector<Embedding> parts;
  parts.reserve(items.size());
  for (const auto& id : items) parts.push_back(embedder.embed(catalog.title_of(id)));
  return normalized_mean(parts, embedder.dim());
}

Embedding avg_real_embedding(const Dataset& dataset, const TitleEmbeddings& titles) {
  if (dataset.sequences().empty()) throw ConfigError("avg_real_embedding requires a non-empty dataset");
  std::vector<Embedding> per_seq;
  per_seq.reserve(dataset.num_users());
  for (const auto& seq : dataset.sequences()) {
    per_seq.push_back(sequence_embedding(seq.items, dataset.catalog(), titles));
  }
  return normalized_mean(per_seq, titles.dim());
}

Embedding avg_real_embedding(const Dataset& dataset, const TextEmbedder& embedder, SequenceEmbeddingMode mode) {
  if (dataset.sequences().empty()) throw ConfigError("avg_real_embedding requires a non-empty dataset");
  std::vector<Embedding> per_seq;
  per_seq.reserve(dataset.num_users());
  for (const auto& seq : dataset.sequences()) {
    per_seq.push_back(sequence_embedding(seq.items, dataset.catalog(), embedder, mode));
  }
  return normalized_mean(per_seq, embedder.dim());
}

}  // namespace promolab

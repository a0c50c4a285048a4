#include "promolab/gateway.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "promolab/common.h"
#include "promolab/http.h"
#include "promolab/textops.h"

namespace promolab {

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::lamarckian: return "lamarckian";
    case OperatorKind::crossover: return "crossover";
    case OperatorKind::mutation: return "mutation";
    case OperatorKind::extract_patterns: return "extract_patterns";
    case OperatorKind::rewrite_title: return "rewrite_title";
  }
  return "unknown";
}

OperatorKind operator_kind_from_string(std::string_view name) {
  for (auto kind : {OperatorKind::lamarckian, OperatorKind::crossover, OperatorKind::mutation,
                    OperatorKind::extract_patterns, OperatorKind::rewrite_title}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown operator kind '" + std::string(name) + "'");
}

void validate_request(const TextOperatorRequest& request) {
  const std::string kind(to_string(request.kind));
  if (request.inputs.empty()) throw ConfigError(kind + ": inputs must be non-empty");
  switch (request.kind) {
    case OperatorKind::crossover:
      if (request.inputs.size() != 2) {
        throw ConfigError("crossover needs exactly 2 inputs, got " + std::to_string(request.inputs.size()));
      }
      break;
    case OperatorKind::rewrite_title:
      if (request.inputs.size() != 1) throw ConfigError("rewrite_title needs exactly 1 input");
      [[fallthrough]];
    case OperatorKind::lamarckian:
    case OperatorKind::extract_patterns:
      if (request.count == 0) throw ConfigError(kind + ": count must be positive");
      break;
    case OperatorKind::mutation: break;
  }
}

std::size_t expected_response_count(const TextOperatorRequest& request) {
  switch (request.kind) {
    case OperatorKind::lamarckian: return request.count;
    case OperatorKind::crossover: return 2;
    case OperatorKind::mutation: return request.inputs.size();
    case OperatorKind::rewrite_title: return request.count;
    case OperatorKind::extract_patterns: return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// QueryLedger
// ---------------------------------------------------------------------------

void QueryLedger::set_cap(const std::string& endpoint, std::optional<std::uint64_t> cap) {
  std::lock_guard lock(mutex_);
  Counter& c = counters_[endpoint];
  if (cap && c.count > *cap) throw ConfigError("cap below current count for endpoint '" + endpoint + "'");
  c.cap = cap;
}

std::uint64_t QueryLedger::charge(const std::string& endpoint, std::uint64_t n) {
  if (n == 0) throw ConfigError("ledger charge must be at least 1");
  std::lock_guard lock(mutex_);
  Counter& c = counters_[endpoint];
  const std::uint64_t attempted = c.count + n;
  if (c.cap && attempted > *c.cap) throw BudgetError(endpoint, *c.cap, attempted);
  c.count = attempted;
  c.last_charge = std::chrono::steady_clock::now();
  return c.count;
}

std::uint64_t QueryLedger::count(const std::string& endpoint) const {
  std::lock_guard lock(mutex_);
  auto it = counters_.find(endpoint);
  return it == counters_.end() ? 0 : it->second.count;
}

std::optional<std::uint64_t> QueryLedger::cap(const std::string& endpoint) const {
  std::lock_guard lock(mutex_);
  auto it = counters_.find(endpoint);
  return it == counters_.end() ? std::nullopt : it->second.cap;
}

std::optional<std::uint64_t> QueryLedger::remaining(const std::string& endpoint) const {
  std::lock_guard lock(mutex_);
  auto it = counters_.find(endpoint);
  if (it == counters_.end() || !it->second.cap) return std::nullopt;
  return *it->second.cap - it->second.count;
}

nlohmann::json QueryLedger::summary() const {
  std::lock_guard lock(mutex_);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, c] : counters_) {
    out[name] = {{"count", c.count}, {"cap", c.cap ? nlohmann::json(*c.cap) : nlohmann::json(nullptr)}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mock operators
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Sentences are split after '.', '!' or '?' followed by whitespace.
std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current += text[i];
    bool end = (text[i] == '.' || text[i] == '!' || text[i] == '?') &&
               (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
    if (end) {
      auto first = current.find_first_not_of(' ');
      if (first != std::string::npos) out.push_back(current.substr(first));
      current.clear();
    }
  }
  auto first = current.find_first_not_of(' ');
  if (first != std::string::npos) out.push_back(current.substr(first));
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

const std::vector<std::string> kLamarckianTemplates = {
    "Recommend the next item the user is most likely to interact with, paying attention to {a} and {b}.",
    "Given the interaction history, predict the next product and favor items related to {a}.",
    "You are a recommender. Rank candidate items by how well they follow the last item, especially {a} {b}.",
    "Suggest one item from the catalog that matches the user's recent interests such as {a}.",
    "Predict what the customer will choose next, considering popular items and {b}.",
    "Infer the user's preferences from the sequence ({a}, {b}) and recommend the following item.",
    "Select the item that best continues this purchase history about {a}.",
    "Based on the most recent interactions, propose the next article, for example {b} or {a}.",
};

const std::set<std::string> kDemoStopwords = {"history", "next", "the", "and", "a", "of", "to", "in", "user"};

const std::vector<std::vector<std::string>> kSynonyms = {
    {"recommend", "suggest", "propose"},
    {"next", "upcoming", "following"},
    {"item", "product", "article"},
    {"items", "products", "articles"},
    {"user", "customer", "shopper"},
    {"user's", "customer's", "shopper's"},
    {"history", "sequence", "record"},
    {"popular", "trending", "bestselling"},
    {"similar", "related", "matching"},
    {"recent", "latest", "newest"},
    {"predict", "infer", "anticipate"},
    {"likely", "probable"},
    {"interests", "preferences", "tastes"},
    {"considering", "weighing", "using"},
    {"favor", "prefer", "prioritize"},
    {"best", "most", "strongly"},
    {"choose", "pick", "select"},
};

const std::vector<std::string> kInsertions = {"carefully", "popular", "recent", "similar", "frequently",
                                              "closely", "consistent", "relevant"};

/// Case-folded word with trailing punctuation split off.
std::pair<std::string, std::string> strip_punct(const std::string& word) {
  std::size_t end = word.size();
  while (end > 0 && std::ispunct(static_cast<unsigned char>(word[end - 1])) && word[end - 1] != '\'') --end;
  return {word.substr(0, end), word.substr(end)};
}

}  // namespace

std::vector<std::string> mock_lamarckian(const std::vector<std::string>& demos, std::size_t k, std::uint64_t seed) {
  std::map<std::string, std::size_t> freq;
  for (const auto& demo : demos) {
    for (const auto& tok : token_list(demo)) {
      if (tok.size() < 3 || kDemoStopwords.count(tok)) continue;
      if (std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
      ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < 2 * k + 2; ++i) tokens.push_back(ranked[i].first);
  if (tokens.empty()) tokens = {"the user's taste", "recent items"};

  const std::size_t n_templates = kLamarckianTemplates.size();
  const std::size_t offset = static_cast<std::size_t>(splitmix64(seed) % n_templates);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < k; ++i) {
    std::string text = kLamarckianTemplates[(i + offset) % n_templates];
    const std::string& a = tokens[(2 * i) % tokens.size()];
    const std::string& b = tokens[(2 * i + 1) % tokens.size()];
    for (auto [slot, value] : {std::pair<std::string, const std::string*>{"{a}", &a}, {"{b}", &b}}) {
      auto pos = text.find(slot);
      if (pos != std::string::npos) text.replace(pos, slot.size(), *value);
    }
    if (!seen.insert(text).second) {
      text += " Variant " + std::to_string(i) + ".";
      seen.insert(text);
    }
    out.push_back(std::move(text));
  }
  return out;
}

int crossover_shift(std::uint64_t seed) { return static_cast<int>(splitmix64(seed) % 3) - 1; }

std::vector<std::string> mock_crossover(const std::string& a, const std::string& b, std::uint64_t seed) {
  auto sa = split_sentences(a);
  auto sb = split_sentences(b);
  const bool sentence_level = sa.size() >= 2 && sb.size() >= 2;
  std::vector<std::string> pa = sentence_level ? sa : split_words(a);
  std::vector<std::string> pb = sentence_level ? sb : split_words(b);
  const int shift = crossover_shift(seed);
  auto pivot = [shift](std::size_t n) -> std::size_t {
    if (n < 2) return n;
    long p = static_cast<long>(n / 2) + shift;
    return static_cast<std::size_t>(std::clamp<long>(p, 1, static_cast<long>(n) - 1));
  };
  const std::size_t ia = pivot(pa.size());
  const std::size_t ib = pivot(pb.size());
  std::vector<std::string> c1(pa.begin(), pa.begin() + static_cast<std::ptrdiff_t>(ia));
  c1.insert(c1.end(), pb.begin() + static_cast<std::ptrdiff_t>(ib), pb.end());
  std::vector<std::string> c2(pb.begin(), pb.begin() + static_cast<std::ptrdiff_t>(ib));
  c2.insert(c2.end(), pa.begin() + static_cast<std::ptrdiff_t>(ia), pa.end());
  return {join(c1, " "), join(c2, " ")};
}

std::string mock_mutation(const std::string& text, std::uint64_t seed, std::size_t max_length) {
  Rng rng(derive_seed(seed, 0x307a));
  auto words = split_words(text);
  if (words.empty()) return kInsertions[rng.index(kInsertions.size())];

  // Candidate positions for a synonym swap.
  std::vector<std::pair<std::size_t, std::size_t>> swappable;  // (word index, synonym group)
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string core = lower(strip_punct(words[i]).first);
    for (std::size_t g = 0; g < kSynonyms.size(); ++g) {
      if (std::find(kSynonyms[g].begin(), kSynonyms[g].end(), core) != kSynonyms[g].end()) {
        swappable.emplace_back(i, g);
        break;
      }
    }
  }

  if (!swappable.empty()) {
    auto [pos, group] = swappable[rng.index(swappable.size())];
    auto [core, punct] = strip_punct(words[pos]);
    const auto& syns = kSynonyms[group];
    std::vector<std::string> others;
    for (const auto& s : syns) {
      if (s != lower(core)) others.push_back(s);
    }
    std::string repl = others[rng.index(others.size())];
    if (!core.empty() && std::isupper(static_cast<unsigned char>(core[0]))) repl = capitalize(repl);
    words[pos] = repl + punct;
  } else if (text.size() < max_length) {
    std::size_t pos = rng.index(words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), kInsertions[rng.index(kInsertions.size())]);
  } else {
    words.erase(words.begin() + static_cast<std::ptrdiff_t>(rng.index(words.size())));
  }

  // Occasionally grow the instruction with an insertion when there is room.
  if (rng.index(3) == 0 && text.size() < max_length) {
    std::size_t pos = rng.index(words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), kInsertions[rng.index(kInsertions.size())]);
  }

  std::string mutated = join(words, " ");
  auto sentences = split_sentences(mutated);
  if (sentences.size() >= 2 && rng.index(2) == 0) {
    std::size_t i = rng.index(sentences.size());
    std::size_t j = rng.index(sentences.size() - 1);
    if (j >= i) ++j;
    std::swap(sentences[i], sentences[j]);
    mutated = join(sentences, " ");
  }
  if (mutated == text) mutated += " " + kInsertions[rng.index(kInsertions.size())];
  return mutated;
}

std::vector<std::string> mock_extract_patterns(const std::vector<std::string>& titles, std::size_t top_p,
                                               const std::vector<std::string>& excluded) {
  if (titles.empty()) throw ConfigError("extract_patterns needs at least one anchor title");
  std::set<std::string> skip;
  for (const auto& e : excluded) {
    for (const auto& t : token_list(e)) skip.insert(t);
  }
  struct Stat {
    std::size_t df = 0;
    std::size_t first_pos = SIZE_MAX;
  };
  std::map<std::string, Stat> stats;
  std::map<std::size_t, std::size_t> lengths;
  for (const auto& title : titles) {
    auto toks = token_list(title);
    ++lengths[toks.size()];
    std::set<std::string> in_title;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (skip.count(toks[i])) continue;
      Stat& s = stats[toks[i]];
      s.first_pos = std::min(s.first_pos, i);
      if (in_title.insert(toks[i]).second) ++s.df;
    }
  }
  std::vector<std::pair<std::string, Stat>> ranked(stats.begin(), stats.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.second.df != y.second.df) return x.second.df > y.second.df;
    return x.second.first_pos < y.second.first_pos;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && out.size() < top_p; ++i) out.push_back(ranked[i].first);
  std::size_t dominant = 0, best = 0;
  for (const auto& [len, n] : lengths) {
    if (n > best) {
      best = n;
      dominant = len;
    }
  }
  out.push_back("length:" + std::to_string(dominant));
  return out;
}

std::vector<std::string> mock_rewrite_title(const std::string& title, const std::vector<std::string>& core_tokens,
                                            const std::vector<std::string>& patterns, std::size_t n,
                                            std::uint64_t seed) {
  const TokenSet present = tokenize(title);
  std::vector<std::string> available;
  for (const auto& p : patterns) {
    if (p.rfind("length:", 0) == 0) continue;
    auto toks = token_list(p);
    if (toks.size() != 1 || present.count(toks[0])) continue;
    if (std::find(available.begin(), available.end(), toks[0]) == available.end()) available.push_back(toks[0]);
  }
  auto words = split_words(title);
  std::vector<std::string> out;
  out.reserve(n);
  const std::size_t start = available.empty() ? 0 : static_cast<std::size_t>(splitmix64(seed) % available.size());
  auto pick = [&](std::size_t k) { return capitalize(available[(start + k) % available.size()]); };
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::string> w = words;
    if (!available.empty()) {
      switch (k % 3) {
        case 0: w.push_back(pick(k)); break;
        case 1: w.insert(w.begin(), pick(k)); break;
        default:
          w.insert(w.begin() + (w.empty() ? 0 : 1), pick(k));
          w.push_back(pick(k + 1));
          break;
      }
    }
    std::string candidate = join(w, " ");
    // Core tokens survive by construction; re-append any that were lost to
    // whitespace oddities in the source title.
    const TokenSet have = tokenize(candidate);
    for (const auto& core : core_tokens) {
      for (const auto& t : token_list(core)) {
        if (!have.count(t)) candidate += " " + t;
      }
    }
    out.push_back(std::move(candidate));
  }
  return out;
}

std::vector<std::string> MockTextOperator::invoke(const TextOperatorRequest& request) {
  validate_request(request);
  switch (request.kind) {
    case OperatorKind::lamarckian: return mock_lamarckian(request.inputs, request.count, request.seed);
    case OperatorKind::crossover: return mock_crossover(request.inputs[0], request.inputs[1], request.seed);
    case OperatorKind::mutation: {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < request.inputs.size(); ++i) {
        out.push_back(mock_mutation(request.inputs[i], derive_seed(request.seed, i), request.max_length));
      }
      return out;
    }
    case OperatorKind::extract_patterns:
      return mock_extract_patterns(request.inputs, request.count, request.core_tokens);
    case OperatorKind::rewrite_title:
      return mock_rewrite_title(request.inputs[0], request.core_tokens, request.patterns, request.count,
                                request.seed);
  }
  throw ConfigError("unsupported operator kind");
}

// ---------------------------------------------------------------------------
// Templates and the remote backend
// ---------------------------------------------------------------------------

TemplateSet TemplateSet::load(const std::filesystem::path& dir, int version) {
  TemplateSet set;
  for (auto kind : {OperatorKind::lamarckian, OperatorKind::crossover, OperatorKind::mutation,
                    OperatorKind::extract_patterns, OperatorKind::rewrite_title}) {
    auto path = dir / (std::string(to_string(kind)) + ".v" + std::to_string(version) + ".txt");
    std::ifstream in(path);
    if (!in) throw ConfigError("missing operator template '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    set.templates_[kind] = buf.str();
  }
  return set;
}

std::string TemplateSet::render(const TextOperatorRequest& request) const {
  auto it = templates_.find(request.kind);
  if (it == templates_.end()) throw ConfigError("no template for operator '" + std::string(to_string(request.kind)) + "'");
  std::string numbered;
  for (std::size_t i = 0; i < request.inputs.size(); ++i) {
    numbered += std::to_string(i + 1) + ". " + request.inputs[i] + "\n";
  }
  const std::map<std::string, std::string> values = {
      {"{{inputs}}", numbered},
      {"{{count}}", std::to_string(expected_response_count(request))},
      {"{{core_tokens}}", join(request.core_tokens, ", ")},
      {"{{patterns}}", join(request.patterns, ", ")},
      {"{{max_length}}", std::to_string(request.max_length)},
  };
  std::string text = it->second;
  for (const auto& [key, value] : values) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
      text.replace(pos, key.size(), value);
    }
  }
  return text;
}

std::vector<std::string> parse_candidate_lines(const std::string& content) {
  std::vector<std::string> out;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t i = 0;
    while (i < line.size() && (std::isspace(static_cast<unsigned char>(line[i])) || line[i] == '-' ||
                               line[i] == '*' || line[i] == '#')) {
      ++i;
    }
    std::size_t j = i;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')' || line[j] == ':')) i = j + 1;
    std::string s = line.substr(i);
    auto first = s.find_first_not_of(" \t\"'");
    auto last = s.find_last_not_of(" \t\r\"'");
    if (first == std::string::npos) continue;
    out.push_back(s.substr(first, last - first + 1));
  }
  return out;
}

RemoteTextOperator::RemoteTextOperator(std::shared_ptr<HttpJsonClient> client, std::string model,
                                       TemplateSet templates, std::string path)
    : client_(std::move(client)), model_(std::move(model)), templates_(std::move(templates)), path_(std::move(path)) {}

std::vector<std::string> RemoteTextOperator::complete(const std::string& prompt, const TextOperatorRequest& request) {
  nlohmann::json body{
      {"model", model_},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
      {"temperature", request.temperature},
      {"seed", request.seed},
  };
  nlohmann::json response = client_->post(path_, body);
  std::string content;
  try {
    content = response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("chat completion response malformed: ") + e.what());
  }
  return parse_candidate_lines(content);
}

std::vector<std::string> RemoteTextOperator::invoke(const TextOperatorRequest& request) {
  validate_request(request);
  if (request.kind == OperatorKind::mutation && request.inputs.size() > 1) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < request.inputs.size(); ++i) {
      TextOperatorRequest single = request;
      single.inputs = {request.inputs[i]};
      single.seed = derive_seed(request.seed, i);
      auto r = invoke(single);
      out.push_back(r.front());
    }
    return out;
  }
  const std::size_t want = expected_response_count(request);
  std::string prompt = templates_.render(request);
  auto lines = complete(prompt, request);
  if (lines.size() < want) {
    prompt += "\nRespond with exactly " + std::to_string(want) + " lines and nothing else.";
    lines = complete(prompt, request);
  }
  if (lines.size() < want) {
    throw FormatError(std::string(to_string(request.kind)) + ": expected " + std::to_string(want) +
                      " candidates, got " + std::to_string(lines.size()));
  }
  if (request.kind != OperatorKind::extract_patterns) lines.resize(want);
  for (auto& l : lines) {
    if (l.size() > request.max_length) l.resize(request.max_length);
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<TextOperator> backend, std::shared_ptr<QueryLedger> ledger)
    : backend_(std::move(backend)), ledger_(std::move(ledger)) {
  if (!backend_) throw ConfigError("gateway requires a backend");
  if (!ledger_) ledger_ = std::make_shared<QueryLedger>();
}

std::vector<std::string> Gateway::invoke(const TextOperatorRequest& request) {
  validate_request(request);
  ledger_->charge("llm/" + std::string(to_string(request.kind)));
  auto out = backend_->invoke(request);
  const std::size_t want = expected_response_count(request);
  if (out.size() < want) {
    throw FormatError(std::string(to_string(request.kind)) + ": backend returned " + std::to_string(out.size()) +
                      " texts, expected " + std::to_string(want));
  }
  return out;
}

}  // namespace promolab

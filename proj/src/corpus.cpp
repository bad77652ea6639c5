#include "essaylens/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "essaylens/error.hpp"
#include "essaylens/rng.hpp"

namespace essaylens::corpus {

void validate(const EssaySetMeta& meta) {
  if (meta.score_min >= meta.score_max)
    fail(ErrorCode::invalid_argument, "essay set " + std::to_string(meta.set_id) + " needs score_min < score_max");
}

void to_json(nlohmann::json& j, const EssaySetMeta& m) {
  j = nlohmann::json{{"set_id", m.set_id},
                     {"grade_level", m.grade_level},
                     {"avg_length_words", m.avg_length_words},
                     {"score_min", m.score_min},
                     {"score_max", m.score_max},
                     {"essay_count", m.essay_count},
                     {"source_dependent", m.source_dependent},
                     {"description", m.description}};
  if (m.prompt) j["prompt"] = *m.prompt;
  if (m.passage) j["passage"] = *m.passage;
}

void from_json(const nlohmann::json& j, EssaySetMeta& m) {
  j.at("set_id").get_to(m.set_id);
  m.grade_level = j.value("grade_level", 0);
  m.avg_length_words = j.value("avg_length_words", 0);
  j.at("score_min").get_to(m.score_min);
  j.at("score_max").get_to(m.score_max);
  m.essay_count = j.value("essay_count", 0);
  m.source_dependent = j.value("source_dependent", false);
  m.description = j.value("description", std::string{});
  if (j.contains("prompt") && j["prompt"].is_string()) m.prompt = j["prompt"].get<std::string>();
  if (j.contains("passage") && j["passage"].is_string()) m.passage = j["passage"].get<std::string>();
}

EssaySetCollection::EssaySetCollection(std::vector<EssaySetMeta> sets) : sets_(std::move(sets)) {
  for (const auto& m : sets_) validate(m);
}

EssaySetCollection EssaySetCollection::builtin() {
  // set, grade, avg words, min, max, essays, source-dependent, description
  return EssaySetCollection({
      {1, 8, 350, 2, 12, 1785, false, "Persuasive Letter about Technology Use", {}, {}},
      {2, 10, 350, 1, 6, 1800, false, "Persuasive Essay about Library Censorship", {}, {}},
      {3, 10, 150, 0, 3, 1726, true, "Source-dependent Analysis of Setting", {}, {}},
      {4, 10, 150, 0, 3, 1772, true, "Source-dependent Analysis of Author's Purpose", {}, {}},
      {5, 8, 150, 0, 4, 1805, true, "Source-dependent Analysis of Mood", {}, {}},
      {6, 10, 150, 0, 4, 1800, true, "Source-dependent Demonstration of comprehension of Text", {}, {}},
      {7, 7, 250, 0, 30, 1730, false, "Narrative about Patience", {}, {}},
      {8, 10, 650, 0, 60, 918, false, "Narrative about Laughter", {}, {}},
  });
}

EssaySetCollection EssaySetCollection::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_line, std::string("essay-set metadata is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) fail(ErrorCode::malformed_line, "essay-set metadata must be a JSON array");
  try {
    return EssaySetCollection(j.get<std::vector<EssaySetMeta>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_line, std::string("essay-set metadata: ") + e.what());
  }
}

EssaySetCollection EssaySetCollection::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open essay-set metadata file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

const EssaySetMeta* EssaySetCollection::find(int set_id) const {
  for (const auto& m : sets_)
    if (m.set_id == set_id) return &m;
  return nullptr;
}

const EssaySetMeta& EssaySetCollection::at(int set_id) const {
  if (const auto* m = find(set_id)) return *m;
  fail(ErrorCode::not_found, "unknown essay set " + std::to_string(set_id));
}

void EssaySetCollection::override_with(const EssaySetCollection& other) {
  for (const auto& m : other.sets_) {
    auto it = std::find_if(sets_.begin(), sets_.end(), [&](const auto& s) { return s.set_id == m.set_id; });
    if (it == sets_.end()) sets_.push_back(m);
    else *it = m;
  }
}

double EssaySetCollection::mean_class_count() const {
  if (sets_.empty()) fail(ErrorCode::invalid_argument, "empty essay-set collection");
  double total = 0;
  for (const auto& m : sets_) total += m.n_classes();
  return total / static_cast<double>(sets_.size());
}

nlohmann::json EssaySetCollection::to_json() const { return nlohmann::json(sets_); }

double normalize_score(int score, const EssaySetMeta& meta) {
  return static_cast<double>(score - meta.score_min) / static_cast<double>(meta.score_max - meta.score_min);
}

int denormalize_score(double value, const EssaySetMeta& meta) {
  if (!std::isfinite(value)) fail(ErrorCode::invalid_argument, "normalized score is not finite");
  const double raw = meta.score_min + value * static_cast<double>(meta.score_max - meta.score_min);
  const auto rounded = static_cast<long>(std::lround(std::clamp(raw, -1e9, 1e9)));
  return static_cast<int>(std::clamp<long>(rounded, meta.score_min, meta.score_max));
}

// -- encoding -------------------------------------------------------------------

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c >> 5) == 0x6) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c >> 4) == 0xe) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c >> 3) == 0x1e) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10ffff)) ||
        (cp >= 0xd800 && cp <= 0xdfff))
      return false;
    i += len;
  }
  return true;
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

// 0x80..0x9f; undefined slots map to U+FFFD.
constexpr std::uint32_t kCp1252High[32] = {
    0x20ac, 0xfffd, 0x201a, 0x0192, 0x201e, 0x2026, 0x2020, 0x2021, 0x02c6, 0x2030, 0x0160,
    0x2039, 0x0152, 0xfffd, 0x017d, 0xfffd, 0xfffd, 0x2018, 0x2019, 0x201c, 0x201d, 0x2022,
    0x2013, 0x2014, 0x02dc, 0x2122, 0x0161, 0x203a, 0x0153, 0xfffd, 0x017e, 0x0178};

}  // namespace

std::string windows1252_to_utf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size() + bytes.size() / 8);
  for (char ch : bytes) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 && c < 0xa0) append_utf8(out, kCp1252High[c - 0x80]);
    else append_utf8(out, c);
  }
  return out;
}

// -- TSV ------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<int> parse_int(std::string_view s) {
  s = trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<EssayRecord> parse_asap_tsv(std::istream& in, const EssaySetCollection& sets, ParseOptions opts) {
  std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (!is_valid_utf8(content)) {
    content = windows1252_to_utf8(content);
    if (opts.warnings) opts.warnings->push_back("input is not valid UTF-8; decoded as Windows-1252");
  }
  if (content.size() >= 3 && content.compare(0, 3, "\xEF\xBB\xBF") == 0) content.erase(0, 3);

  std::istringstream lines(content);
  std::string line;
  if (!std::getline(lines, line)) fail(ErrorCode::missing_column, "TSV input has no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::map<std::string, std::size_t> column;
  {
    const auto header = split_tabs(line);
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(std::string(trim(header[i])), i);
  }
  auto col = [&](const char* name) {
    auto it = column.find(name);
    if (it == column.end()) fail(ErrorCode::missing_column, std::string("TSV header lacks required column '") + name + "'");
    return it->second;
  };
  const std::size_t c_id = col("essay_id");
  const std::size_t c_set = col("essay_set");
  const std::size_t c_text = col("essay");
  const std::size_t c_score = col("domain1_score");
  const std::size_t needed = std::max({c_id, c_set, c_text, c_score}) + 1;

  std::vector<EssayRecord> records;
  std::size_t line_no = 1;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_tabs(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() < needed)
      fail(ErrorCode::malformed_line, where + ": expected at least " + std::to_string(needed) + " fields, found " +
                                          std::to_string(fields.size()));
    EssayRecord r;
    r.essay_id = std::string(trim(fields[c_id]));
    const auto set_id = parse_int(fields[c_set]);
    if (!set_id) fail(ErrorCode::malformed_line, where + ": essay_set '" + std::string(fields[c_set]) + "' is not an integer");
    const EssaySetMeta* meta = sets.find(*set_id);
    if (!meta) fail(ErrorCode::malformed_line, where + ": unknown essay set " + std::to_string(*set_id));
    const auto score = parse_int(fields[c_score]);
    if (!score)
      fail(ErrorCode::bad_score, where + ": domain1_score '" + std::string(fields[c_score]) + "' is not an integer");
    if (*score < meta->score_min || *score > meta->score_max)
      fail(ErrorCode::score_out_of_range, where + ": score " + std::to_string(*score) + " outside set " +
                                              std::to_string(*set_id) + " range " + std::to_string(meta->score_min) +
                                              "-" + std::to_string(meta->score_max));
    r.set_id = *set_id;
    r.text = std::string(fields[c_text]);
    r.score = *score;
    r.normalized = normalize_score(*score, *meta);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EssayRecord> load_asap_tsv(const std::string& path, const EssaySetCollection& sets, ParseOptions opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open corpus file " + path);
  return parse_asap_tsv(in, sets, opts);
}

// -- folds ------------------------------------------------------------------------

FoldPlan make_folds(std::size_t n, std::uint64_t seed) {
  if (n < kFoldCount)
    fail(ErrorCode::too_few_records, "five-fold cross validation needs at least 5 records, got " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  CounterRng rng(CounterRng::derive(seed, 0xF01D));
  rng.shuffle(perm.begin(), perm.end());

  std::array<std::vector<std::size_t>, kFoldCount> parts;
  for (std::size_t k = 0; k < kFoldCount; ++k) {
    parts[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(k * n / kFoldCount),
                    perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * n / kFoldCount));
    std::sort(parts[k].begin(), parts[k].end());
  }

  FoldPlan plan;
  plan.seed = seed;
  for (std::size_t i = 0; i < kFoldCount; ++i) {
    Fold& f = plan.folds[i];
    f.test = parts[i];
    f.dev = parts[(i + 1) % kFoldCount];
    for (std::size_t k = 0; k < kFoldCount; ++k)
      if (k != i && k != (i + 1) % kFoldCount) f.train.insert(f.train.end(), parts[k].begin(), parts[k].end());
    std::sort(f.train.begin(), f.train.end());
  }
  return plan;
}

std::vector<std::size_t> reduce_training_set(const std::vector<std::size_t>& indices, const std::vector<int>& labels,
                                             double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    fail(ErrorCode::fraction_out_of_range, "fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (labels.size() != indices.size()) fail(ErrorCode::invalid_argument, "one label per index is required");
  const std::size_t n = indices.size();
  if (fraction == 1.0 || n == 0) return indices;

  std::map<int, std::vector<std::size_t>> by_label;  // label -> positions in `indices`
  for (std::size_t k = 0; k < n; ++k) by_label[labels[k]].push_back(k);

  const auto target = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  const bool cover_all = target >= by_label.size();

  struct Quota {
    int label;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [label, members] : by_label) {
    const double exact = fraction * static_cast<double>(members.size());
    auto take = static_cast<std::size_t>(std::floor(exact));
    if (cover_all) take = std::max<std::size_t>(take, 1);
    take = std::min(take, members.size());
    quotas.push_back({label, take, exact - std::floor(exact)});
    assigned += take;
  }
  // Hand out the remaining slots by largest fractional remainder, or claw back
  // from the labels furthest above their exact share.
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (assigned < target) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (std::size_t pass = 0; assigned < target && pass < n; ++pass)
      for (std::size_t i : order) {
        if (assigned == target) break;
        if (quotas[i].take < by_label[quotas[i].label].size()) {
          ++quotas[i].take;
          ++assigned;
        }
      }
  } else if (assigned > target) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return quotas[a].take > quotas[b].take; });
    for (std::size_t pass = 0; assigned > target && pass < n; ++pass)
      for (std::size_t i : order) {
        if (assigned == target) break;
        if (quotas[i].take > (cover_all ? 1u : 0u)) {
          --quotas[i].take;
          --assigned;
        }
      }
  }

  std::vector<char> keep(n, 0);
  for (const auto& q : quotas) {
    auto members = by_label[q.label];
    CounterRng rng(CounterRng::derive(seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(q.label)) + 0x5EED));
    rng.shuffle(members.begin(), members.end());
    for (std::size_t k = 0; k < q.take; ++k) keep[members[k]] = 1;
  }
  std::vector<std::size_t> out;
  out.reserve(target);
  for (std::size_t k = 0; k < n; ++k)
    if (keep[k]) out.push_back(indices[k]);
  return out;
}

}  // namespace essaylens::corpus

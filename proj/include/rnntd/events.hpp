#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rnntd/errors.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/rng.hpp"

namespace rnntd {

/// One event: time in hours since the corpus epoch and a mark index in [0, K).
struct Event {
  double time = 0.0;
  std::size_t mark = 0;

  bool operator==(const Event&) const = default;
};

/// Events of one stream in strictly increasing time order.
struct EventSequence {
  std::string id;
  std::vector<Event> events;

  std::size_t size() const noexcept { return events.size(); }
  /// Number of (history, next event) pairs the sequence contributes.
  std::size_t transitions() const noexcept { return events.empty() ? 0 : events.size() - 1; }

  bool operator==(const EventSequence&) const = default;
};

/// Throws DataError unless times are finite, nonnegative and strictly increasing
/// and every mark is below num_marks.
inline void validate_sequence(const EventSequence& seq, std::size_t num_marks) {
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const auto& e = seq.events[i];
    if (!std::isfinite(e.time) || e.time < 0.0)
      throw DataError("sequence '" + seq.id + "': invalid time at event " + std::to_string(i));
    if (e.mark >= num_marks)
      throw DataError("sequence '" + seq.id + "': mark " + std::to_string(e.mark) +
                      " out of range at event " + std::to_string(i));
    if (i > 0 && !(seq.events[i - 1].time < e.time))
      throw DataError("sequence '" + seq.id + "': times not strictly increasing at event " +
                      std::to_string(i));
  }
}

/// Bijection between mark strings and dense ids.
class MarkVocabulary {
 public:
  MarkVocabulary() = default;
  explicit MarkVocabulary(std::vector<std::string> marks) {
    for (auto& m : marks) add(std::move(m));
  }

  /// Synthetic vocabulary "m0", "m1", ...
  static MarkVocabulary numbered(std::size_t k) {
    MarkVocabulary v;
    for (std::size_t i = 0; i < k; ++i) v.add("m" + std::to_string(i));
    return v;
  }

  std::size_t add(std::string mark) {
    if (auto it = index_.find(mark); it != index_.end()) return it->second;
    const std::size_t id = marks_.size();
    index_.emplace(mark, id);
    marks_.push_back(std::move(mark));
    return id;
  }

  std::optional<std::size_t> find(std::string_view mark) const {
    auto it = index_.find(std::string(mark));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t encode(std::string_view mark) const {
    if (auto id = find(mark)) return *id;
    throw DataError("unknown mark '" + std::string(mark) + "'");
  }

  const std::string& decode(std::size_t id) const {
    if (id >= marks_.size()) throw DataError("mark id " + std::to_string(id) + " out of range");
    return marks_[id];
  }

  std::size_t size() const noexcept { return marks_.size(); }
  const std::vector<std::string>& marks() const noexcept { return marks_; }

  bool operator==(const MarkVocabulary& other) const { return marks_ == other.marks_; }

  /// One mark per line; line number (0-based) is the id.
  void write(std::ostream& out) const {
    for (const auto& m : marks_) out << m << '\n';
  }

  static MarkVocabulary read(std::istream& in) {
    MarkVocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw DataError("vocabulary line " + std::to_string(lineno) + ": empty mark");
      if (v.find(line)) throw DataError("vocabulary line " + std::to_string(lineno) + ": duplicate mark '" + line + "'");
      v.add(line);
    }
    return v;
  }

 private:
  std::vector<std::string> marks_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Temporal features

/// Shape of the per-event temporal feature vector.
///
/// Coordinate 0 is log(max(dt, 1e-6)) with dt the gap to the previous event
/// (dt = 0 for the first event). With `calendar` on, seven more coordinates
/// follow, each in [0, 1): year (mod 100 from 1970), month, day of month,
/// weekday, hour, minute, second of the event's own timestamp.
struct FeatureConfig {
  bool calendar = true;
  /// Unix time (seconds, UTC) of corpus hour 0.
  std::int64_t epoch_unix_seconds = 0;

  std::size_t dim() const noexcept { return calendar ? 8 : 1; }
  bool operator==(const FeatureConfig&) const = default;
};

inline constexpr double kMinGapHours = 1e-6;

namespace detail {

// Days since 1970-01-01 to (year, month 1..12, day 1..31); H. Hinnant's civil_from_days.
inline void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += (m <= 2);
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

}  // namespace detail

/// Temporal feature vector for an event at cur_time whose predecessor (if any)
/// occurred at prev_time.
inline Vector featurize(std::optional<double> prev_time, double cur_time,
                        const FeatureConfig& config) {
  Vector out(config.dim(), 0.0);
  const double gap = prev_time ? cur_time - *prev_time : 0.0;
  out[0] = std::log(std::max(gap, kMinGapHours));
  if (!config.calendar) return out;

  const double seconds_f = std::floor(cur_time * 3600.0);
  const auto seconds = config.epoch_unix_seconds + static_cast<std::int64_t>(seconds_f);
  const std::int64_t days = detail::floor_div(seconds, 86400);
  const std::int64_t sod = seconds - days * 86400;
  std::int64_t year;
  unsigned month, day;
  detail::civil_from_days(days, year, month, day);
  const std::int64_t weekday = ((days % 7) + 7 + 3) % 7;  // 1970-01-01 was a Thursday; Monday = 0

  out[1] = static_cast<double>(((year - 1970) % 100 + 100) % 100) / 100.0;
  out[2] = static_cast<double>(month - 1) / 12.0;
  out[3] = static_cast<double>(day - 1) / 31.0;
  out[4] = static_cast<double>(weekday) / 7.0;
  out[5] = static_cast<double>(sod / 3600) / 24.0;
  out[6] = static_cast<double>((sod / 60) % 60) / 60.0;
  out[7] = static_cast<double>(sod % 60) / 60.0;
  return out;
}

/// Feature vectors for every event of a sequence.
inline std::vector<Vector> featurize_sequence(const EventSequence& seq, const FeatureConfig& config) {
  std::vector<Vector> out;
  out.reserve(seq.events.size());
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const std::optional<double> prev =
        i == 0 ? std::nullopt : std::optional<double>(seq.events[i - 1].time);
    out.push_back(featurize(prev, seq.events[i].time, config));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical corpus format
//
//   seq_id <TAB> t1:mark1 <TAB> t2:mark2 ...
//
// Times are decimal hours, written with 17 significant digits so a write/read
// cycle is exact. The mark is everything after the first ':'.

struct RawRecord {
  std::string id;
  std::vector<std::pair<double, std::string>> events;
};

namespace detail {

inline double parse_time(std::string_view token, std::size_t lineno) {
  double value = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw DataError("line " + std::to_string(lineno) + ": bad time '" + std::string(token) + "'");
  if (!std::isfinite(value) || value < 0.0)
    throw DataError("line " + std::to_string(lineno) + ": time must be finite and >= 0");
  return value;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string format_time(double t) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", t);
  return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

/// Parse one canonical record. Blank lines yield std::nullopt.
inline std::optional<RawRecord> parse_record(std::string_view line, std::size_t lineno) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.empty()) return std::nullopt;
  const auto fields = detail::split_tabs(line);
  if (fields[0].empty()) throw DataError("line " + std::to_string(lineno) + ": empty sequence id");
  RawRecord rec;
  rec.id = std::string(fields[0]);
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto field = fields[i];
    const auto colon = field.find(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == field.size())
      throw DataError("line " + std::to_string(lineno) + ": expected time:mark, got '" +
                      std::string(field) + "'");
    rec.events.emplace_back(detail::parse_time(field.substr(0, colon), lineno),
                            std::string(field.substr(colon + 1)));
  }
  return rec;
}

inline std::vector<RawRecord> read_raw_records(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto rec = parse_record(line, lineno)) out.push_back(std::move(*rec));
  }
  return out;
}

inline void write_sequence(std::ostream& out, const EventSequence& seq, const MarkVocabulary& vocab) {
  out << seq.id;
  for (const auto& e : seq.events) out << '\t' << detail::format_time(e.time) << ':' << vocab.decode(e.mark);
  out << '\n';
}

inline void write_corpus(std::ostream& out, const std::vector<EventSequence>& corpus,
                         const MarkVocabulary& vocab) {
  for (const auto& seq : corpus) write_sequence(out, seq, vocab);
}

/// Read canonical records against a fixed vocabulary. Unknown marks and
/// non-increasing times are errors naming the line.
inline std::vector<EventSequence> read_corpus(std::istream& in, const MarkVocabulary& vocab) {
  std::vector<EventSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto rec = parse_record(line, lineno);
    if (!rec) continue;
    EventSequence seq{rec->id, {}};
    for (auto& [t, mark] : rec->events) {
      const auto id = vocab.find(mark);
      if (!id) throw DataError("line " + std::to_string(lineno) + ": unknown mark '" + mark + "'");
      if (!seq.events.empty() && !(seq.events.back().time < t))
        throw DataError("line " + std::to_string(lineno) + ": times not strictly increasing");
      seq.events.push_back({t, *id});
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestConfig {
  /// Split a stream wherever consecutive events are more than this many hours apart.
  double gap_hours = 100.0;
  std::size_t min_length = 3;
  /// Keep only the top_k most frequent marks; events with other marks are dropped.
  std::size_t top_k = 256;
  /// Longer pieces are cut into consecutive chunks of at most this many events.
  std::size_t max_length = 200;

  static IngestConfig memetracker() { return {}; }
  static IngestConfig dianping() {
    IngestConfig c;
    c.gap_hours = 1440.0;  // two months
    return c;
  }
};

/// Perturbation applied to an event that does not strictly follow its predecessor.
inline constexpr double kTieBreakHours = 1e-9;

struct IngestStats {
  std::size_t raw_streams = 0;
  std::size_t raw_events = 0;
  std::size_t dropped_rare_mark = 0;
  std::size_t dropped_short = 0;
  std::size_t perturbed = 0;
};

struct Corpus {
  std::vector<EventSequence> sequences;
  MarkVocabulary vocabulary;
  IngestStats stats;
};

/// Preprocess raw streams into training sequences.
///
/// Steps: keep the top_k marks by frequency (ties by mark string); sort each
/// stream by time and nudge ties forward by 1e-9 h; cut at gaps > gap_hours;
/// cut pieces longer than max_length; drop pieces shorter than min_length;
/// finally number marks by descending frequency in the output (ties by string).
/// A stream that yields several pieces gets ids "<id>/<n>"; a single piece
/// keeps its id, which makes ingest(write(ingest(x))) == ingest(x).
inline Corpus ingest_records(const std::vector<RawRecord>& records, const IngestConfig& config,
                             std::ostream* warnings = &std::cerr) {
  if (!(config.gap_hours > 0.0)) throw DataError("gap threshold must be > 0");
  if (config.min_length < 2) throw DataError("minimum sequence length must be >= 2");
  if (config.top_k == 0) throw DataError("top-k must be >= 1");

  Corpus corpus;
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : records) {
    ++corpus.stats.raw_streams;
    corpus.stats.raw_events += rec.events.size();
    for (const auto& [t, mark] : rec.events) ++counts[mark];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > config.top_k) ranked.resize(config.top_k);
  std::unordered_map<std::string, std::size_t> kept;
  for (std::size_t i = 0; i < ranked.size(); ++i) kept.emplace(ranked[i].first, i);

  // Pieces hold provisional mark ids (indices into `ranked`).
  std::vector<EventSequence> pieces;
  for (const auto& rec : records) {
    std::vector<Event> events;
    for (const auto& [t, mark] : rec.events) {
      auto it = kept.find(mark);
      if (it == kept.end()) {
        ++corpus.stats.dropped_rare_mark;
        continue;
      }
      events.push_back({t, it->second});
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    for (std::size_t i = 1; i < events.size(); ++i) {
      if (!(events[i].time > events[i - 1].time)) {
        events[i].time = events[i - 1].time + kTieBreakHours;
        ++corpus.stats.perturbed;
        if (warnings)
          *warnings << "warning: stream '" << rec.id << "': simultaneous events, shifted by 1e-9 h\n";
      }
    }

    std::vector<std::vector<Event>> stream_pieces;
    std::vector<Event> current;
    auto flush = [&] {
      for (std::size_t start = 0; start < current.size(); start += config.max_length) {
        const std::size_t end = std::min(current.size(), start + config.max_length);
        if (end - start >= config.min_length)
          stream_pieces.emplace_back(current.begin() + start, current.begin() + end);
        else
          corpus.stats.dropped_short += end - start;
      }
      current.clear();
    };
    for (const auto& e : events) {
      if (!current.empty() && e.time - current.back().time > config.gap_hours) flush();
      current.push_back(e);
    }
    flush();
    if (stream_pieces.size() == 1) {
      pieces.push_back({rec.id, std::move(stream_pieces.front())});
    } else {
      for (std::size_t p = 0; p < stream_pieces.size(); ++p)
        pieces.push_back({rec.id + "/" + std::to_string(p), std::move(stream_pieces[p])});
    }
  }
  if (pieces.empty()) throw DataError("no usable sequences");

  std::vector<std::size_t> out_counts(ranked.size(), 0);
  for (const auto& p : pieces)
    for (const auto& e : p.events) ++out_counts[e.mark];
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (out_counts[i] > 0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (out_counts[a] != out_counts[b]) return out_counts[a] > out_counts[b];
    return ranked[a].first < ranked[b].first;
  });
  std::vector<std::size_t> remap(ranked.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = i;
    corpus.vocabulary.add(ranked[order[i]].first);
  }
  for (auto& p : pieces)
    for (auto& e : p.events) e.mark = remap[e.mark];
  corpus.sequences = std::move(pieces);
  return corpus;
}

inline Corpus ingest(std::istream& in, const IngestConfig& config, std::ostream* warnings = &std::cerr) {
  return ingest_records(read_raw_records(in), config, warnings);
}

inline Corpus ingest(const std::string& path, const IngestConfig& config,
                     std::ostream* warnings = &std::cerr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return ingest(in, config, warnings);
}

// ---------------------------------------------------------------------------
// Train / validation / test partition

struct CorpusSplit {
  std::vector<EventSequence> train;
  std::vector<EventSequence> validation;
  std::vector<EventSequence> test;
};

/// Sizes of an 80/10/10 partition of n sequences (n >= 3).
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
  if (n < 3) throw DataError("cannot split fewer than 3 sequences");
  std::size_t train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  train = std::min(train, n - 2);
  const std::size_t rest = n - train;
  const std::size_t validation = (rest + 1) / 2;
  return {train, validation, rest - validation};
}

/// Seeded random 80/10/10 partition by sequence.
inline CorpusSplit split(const std::vector<EventSequence>& corpus, std::uint64_t seed) {
  const auto [n_train, n_validation, n_test] = split_sizes(corpus.size());
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Philox rng(seed, 0x73706c6974ULL);
  rng.shuffle(std::span<std::size_t>(order));
  CorpusSplit out;
  out.train.reserve(n_train);
  out.validation.reserve(n_validation);
  out.test.reserve(n_test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& seq = corpus[order[i]];
    if (i < n_train)
      out.train.push_back(seq);
    else if (i < n_train + n_validation)
      out.validation.push_back(seq);
    else
      out.test.push_back(seq);
  }
  return out;
}

inline std::size_t count_transitions(const std::vector<EventSequence>& seqs) noexcept {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.transitions();
  return n;
}

}  // namespace rnntd

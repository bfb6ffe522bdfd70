#include "qdot/photonstream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "qdot/random.hpp"

namespace qdot {

namespace {

std::string with_offset(const std::string& what, std::uint64_t offset) {
  return what + " (byte offset " + std::to_string(offset) + ")";
}

constexpr std::string_view kChannelKeyPrefix = "channel.";

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string encode_metadata(const TagStream& stream) {
  std::string block;
  for (std::size_t c = 0; c < stream.channel_labels().size(); ++c) {
    block += std::string(kChannelKeyPrefix) + std::to_string(c) + "=" + stream.channel_labels()[c] + "\n";
  }
  for (const auto& [key, value] : stream.metadata()) {
    block += key + "=" + value + "\n";
  }
  return block;
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void read(unsigned char* dst, std::size_t n, const char* what) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw FormatError("truncated " + std::string(what) + ": expected " + std::to_string(n) + " bytes, got " +
                            std::to_string(got),
                        offset_);
    }
    offset_ += n;
  }
  std::size_t read_some(unsigned char* dst, std::size_t n) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    offset_ += got;
    return got;
  }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

FormatError::FormatError(const std::string& what, std::uint64_t byte_offset)
    : std::runtime_error(with_offset(what, byte_offset)), offset_(byte_offset) {}

IoError::IoError(const std::string& what, std::uint64_t byte_offset)
    : std::runtime_error(with_offset(what, byte_offset)), offset_(byte_offset) {}

// --- TagStream ---------------------------------------------------------------

std::optional<std::string> TagStream::meta(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) return std::nullopt;
  return it->second;
}

double TagStream::meta_number(const std::string& key) const {
  auto value = meta(key);
  if (!value) throw std::invalid_argument("stream metadata lacks '" + key + "'");
  try {
    std::size_t used = 0;
    double x = std::stod(*value, &used);
    if (used != value->size()) throw std::invalid_argument(key);
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("stream metadata '" + key + "' is not numeric: " + *value);
  }
}

PhotonTag TagStream::tag(std::size_t i) const {
  PhotonTag t;
  t.channel = channels_.at(i);
  t.timestamp = timestamps_[i];
  if (has_truth_) {
    t.truth_frequency = frequencies_[i];
    t.truth_dephasing_rate = dephasing_[i];
  }
  return t;
}

std::size_t TagStream::count(std::uint8_t channel) const {
  return static_cast<std::size_t>(std::count(channels_.begin(), channels_.end(), channel));
}

TagStream TagStream::without_truth() const {
  TagStream out = *this;
  out.has_truth_ = false;
  out.frequencies_.clear();
  out.frequencies_.shrink_to_fit();
  out.dephasing_.clear();
  out.dephasing_.shrink_to_fit();
  return out;
}

TagStream TagStream::with_metadata(const std::string& key, const std::string& value) const {
  TagStream out = *this;
  out.metadata_[key] = value;
  return out;
}

TagStream TagStream::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  TagStream out;
  out.duration_ = duration_;
  out.has_truth_ = has_truth_;
  out.channel_labels_ = channel_labels_;
  out.metadata_ = metadata_;
  out.channels_.assign(channels_.begin() + begin, channels_.begin() + end);
  out.timestamps_.assign(timestamps_.begin() + begin, timestamps_.begin() + end);
  if (has_truth_) {
    out.frequencies_.assign(frequencies_.begin() + begin, frequencies_.begin() + end);
    out.dephasing_.assign(dephasing_.begin() + begin, dephasing_.begin() + end);
  }
  return out;
}

void TagStream::validate() const {
  if (channels_.size() != timestamps_.size()) throw std::logic_error("column length mismatch");
  if (has_truth_ && (frequencies_.size() != size() || dephasing_.size() != size())) {
    throw std::logic_error("truth columns incomplete");
  }
  if (!has_truth_ && (!frequencies_.empty() || !dephasing_.empty())) {
    throw std::logic_error("truth columns present without truth flag");
  }
  if (channel_labels_.size() > 256) throw std::logic_error("more than 256 channels");
  for (std::size_t i = 0; i < size(); ++i) {
    if (timestamps_[i] < 0) throw std::logic_error("negative timestamp at tag " + std::to_string(i));
    if (timestamps_[i] > duration_) throw std::logic_error("timestamp beyond duration at tag " + std::to_string(i));
    if (channels_[i] >= channel_labels_.size()) throw std::logic_error("unknown channel at tag " + std::to_string(i));
    if (i > 0) {
      const bool ordered = timestamps_[i - 1] < timestamps_[i] ||
                           (timestamps_[i - 1] == timestamps_[i] && channels_[i - 1] <= channels_[i]);
      if (!ordered) throw std::logic_error("tags out of order at tag " + std::to_string(i));
    }
  }
}

// --- builder -----------------------------------------------------------------

TagStreamBuilder::TagStreamBuilder(std::vector<std::string> channel_labels, TimePs duration, bool truth) {
  if (channel_labels.empty() || channel_labels.size() > 256) {
    throw std::invalid_argument("channel count must be in [1, 256]");
  }
  if (duration < 0) throw std::invalid_argument("negative duration");
  stream_.channel_labels_ = std::move(channel_labels);
  stream_.duration_ = duration;
  stream_.has_truth_ = truth;
}

void TagStreamBuilder::reserve(std::size_t n) {
  stream_.channels_.reserve(n);
  stream_.timestamps_.reserve(n);
  if (stream_.has_truth_) {
    stream_.frequencies_.reserve(n);
    stream_.dephasing_.reserve(n);
  }
}

void TagStreamBuilder::add(std::uint8_t channel, TimePs timestamp) {
  stream_.channels_.push_back(channel);
  stream_.timestamps_.push_back(timestamp);
  if (stream_.has_truth_) {
    stream_.frequencies_.push_back(0.0);
    stream_.dephasing_.push_back(0.0);
  }
}

void TagStreamBuilder::add(const PhotonTag& tag) {
  stream_.channels_.push_back(tag.channel);
  stream_.timestamps_.push_back(tag.timestamp);
  if (stream_.has_truth_) {
    stream_.frequencies_.push_back(tag.truth_frequency);
    stream_.dephasing_.push_back(tag.truth_dephasing_rate);
  }
}

void TagStreamBuilder::set_meta(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("metadata key/value must not contain '=' in key or newlines: " + key);
  }
  if (key.rfind(kChannelKeyPrefix, 0) == 0) throw std::invalid_argument("reserved metadata key: " + key);
  stream_.metadata_[key] = value;
}

void TagStreamBuilder::merge_metadata(const std::map<std::string, std::string>& meta) {
  for (const auto& [k, v] : meta) set_meta(k, v);
}

TagStream TagStreamBuilder::build() && {
  TagStream& s = stream_;
  const std::size_t n = s.timestamps_.size();
  for (std::uint8_t c : s.channels_) {
    if (c >= s.channel_labels_.size()) throw std::invalid_argument("tag on undeclared channel " + std::to_string(c));
  }

  bool sorted = true;
  for (std::size_t i = 1; i < n && sorted; ++i) {
    sorted = s.timestamps_[i - 1] < s.timestamps_[i] ||
             (s.timestamps_[i - 1] == s.timestamps_[i] && s.channels_[i - 1] <= s.channels_[i]);
  }
  bool in_range = std::all_of(s.timestamps_.begin(), s.timestamps_.end(),
                              [&](TimePs t) { return t >= 0 && t <= s.duration_; });
  if (sorted && in_range) return std::move(s);

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (s.timestamps_[i] >= 0 && s.timestamps_[i] <= s.duration_) order.push_back(static_cast<std::uint32_t>(i));
  }
  if (!sorted) {
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (s.timestamps_[a] != s.timestamps_[b]) return s.timestamps_[a] < s.timestamps_[b];
      return s.channels_[a] < s.channels_[b];
    });
  }
  auto permute = [&](auto& column) {
    std::remove_reference_t<decltype(column)> out;
    out.reserve(order.size());
    for (std::uint32_t i : order) out.push_back(column[i]);
    column = std::move(out);
  };
  permute(s.channels_);
  permute(s.timestamps_);
  if (s.has_truth_) {
    permute(s.frequencies_);
    permute(s.dephasing_);
  }
  return std::move(s);
}

TagStream merge_streams(const std::vector<TagStream>& parts) {
  if (parts.empty()) throw std::invalid_argument("nothing to merge");
  TimePs duration = 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.channel_labels() != parts.front().channel_labels() || p.has_truth() != parts.front().has_truth()) {
      throw std::invalid_argument("merge_streams: incompatible channel layout or truth flag");
    }
    duration = std::max(duration, p.duration());
    total += p.size();
  }
  TagStreamBuilder b(parts.front().channel_labels(), duration, parts.front().has_truth());
  b.reserve(total);
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i) b.add(p.tag(i));
  }
  for (const auto& [k, v] : parts.front().metadata()) b.set_meta(k, v);
  return std::move(b).build();
}

// --- QTAG I/O ----------------------------------------------------------------

std::size_t record_size(bool truth) noexcept { return truth ? kTruthRecordSize : kRecordSize; }

std::size_t header_size(const TagStream& stream) {
  return 4 + 2 + 2 + 1 + 8 + 4 + encode_metadata(stream).size();
}

std::uint64_t write_stream(const TagStream& stream, std::ostream& sink) {
  if (stream.channel_count() == 0 || stream.channel_count() > 255) {
    throw std::invalid_argument("QTAG supports 1..255 channels");
  }
  std::string header;
  header.append(kQtagMagic, 4);
  put_le<std::uint16_t>(header, kQtagVersion);
  put_le<std::uint16_t>(header, stream.has_truth() ? kQtagFlagTruth : 0);
  put_le<std::uint8_t>(header, static_cast<std::uint8_t>(stream.channel_count()));
  put_le<std::uint64_t>(header, static_cast<std::uint64_t>(stream.duration()));
  const std::string meta = encode_metadata(stream);
  put_le<std::uint32_t>(header, static_cast<std::uint32_t>(meta.size()));
  header += meta;

  std::uint64_t written = 0;
  auto flush = [&](const std::string& chunk) {
    sink.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    if (!sink) throw IoError("write failed", written);
    written += chunk.size();
  };
  flush(header);

  const bool truth = stream.has_truth();
  const auto& ch = stream.channels();
  const auto& ts = stream.timestamps();
  std::string chunk;
  constexpr std::size_t kChunkRecords = 1 << 16;
  chunk.reserve(kChunkRecords * record_size(truth));
  for (std::size_t i = 0; i < stream.size(); ++i) {
    put_le<std::uint8_t>(chunk, ch[i]);
    put_le<std::uint64_t>(chunk, static_cast<std::uint64_t>(ts[i]));
    if (truth) {
      put_le<double>(chunk, stream.truth_frequencies()[i]);
      put_le<double>(chunk, stream.truth_dephasing_rates()[i]);
    }
    if ((i + 1) % kChunkRecords == 0) {
      flush(chunk);
      chunk.clear();
    }
  }
  if (!chunk.empty()) flush(chunk);
  return written;
}

TagStream read_stream(std::istream& source) {
  Reader r(source);
  unsigned char fixed[4 + 2 + 2 + 1 + 8 + 4];
  r.read(fixed, 4, "magic");
  if (std::memcmp(fixed, kQtagMagic, 4) != 0) throw FormatError("bad magic, expected QTAG", 0);
  r.read(fixed + 4, sizeof(fixed) - 4, "header");
  const auto version = get_le<std::uint16_t>(fixed + 4);
  if (version != kQtagVersion) throw FormatError("unsupported QTAG version " + std::to_string(version), 4);
  const auto flags = get_le<std::uint16_t>(fixed + 6);
  if (flags & ~kQtagFlagTruth) throw FormatError("unknown flag bits", 6);
  const auto channel_count = get_le<std::uint8_t>(fixed + 8);
  if (channel_count == 0) throw FormatError("zero channels", 8);
  const auto duration = get_le<std::uint64_t>(fixed + 9);
  if (duration > static_cast<std::uint64_t>(INT64_MAX)) throw FormatError("duration overflows", 9);
  const auto meta_len = get_le<std::uint32_t>(fixed + 17);

  std::string meta(meta_len, '\0');
  const std::uint64_t meta_offset = r.offset();
  if (meta_len > 0) r.read(reinterpret_cast<unsigned char*>(meta.data()), meta_len, "metadata block");

  TagStream s;
  s.duration_ = static_cast<TimePs>(duration);
  s.has_truth_ = (flags & kQtagFlagTruth) != 0;
  s.channel_labels_.assign(channel_count, std::string());
  std::istringstream lines(meta);
  std::string line;
  std::uint64_t line_offset = meta_offset;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("malformed metadata line '" + line + "'", line_offset);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key.rfind(kChannelKeyPrefix, 0) == 0) {
      const auto idx = std::stoul(key.substr(kChannelKeyPrefix.size()));
      if (idx >= channel_count) throw FormatError("label for undeclared channel " + key, line_offset);
      s.channel_labels_[idx] = std::move(value);
    } else {
      s.metadata_[std::move(key)] = std::move(value);
    }
    line_offset += line.size() + 1;
  }

  const std::size_t rec = record_size(s.has_truth_);
  unsigned char buf[kTruthRecordSize];
  while (true) {
    const std::uint64_t record_offset = r.offset();
    const std::size_t got = r.read_some(buf, rec);
    if (got == 0) break;
    if (got != rec) {
      throw FormatError("truncated record: expected " + std::to_string(rec) + " bytes, got " + std::to_string(got),
                        record_offset);
    }
    const auto channel = buf[0];
    const auto ts = get_le<std::uint64_t>(buf + 1);
    if (channel >= channel_count) throw FormatError("record on undeclared channel", record_offset);
    if (ts > duration) throw FormatError("timestamp beyond duration", record_offset);
    const auto t = static_cast<TimePs>(ts);
    if (!s.timestamps_.empty()) {
      const TimePs prev = s.timestamps_.back();
      if (t < prev || (t == prev && channel < s.channels_.back())) {
        throw FormatError("tags out of order", record_offset);
      }
    }
    s.channels_.push_back(channel);
    s.timestamps_.push_back(t);
    if (s.has_truth_) {
      s.frequencies_.push_back(get_le<double>(buf + 9));
      s.dephasing_.push_back(get_le<double>(buf + 17));
    }
  }
  return s;
}

void write_stream_file(const TagStream& stream, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing", 0);
  write_stream(stream, f);
}

TagStream read_stream_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path, 0);
  return read_stream(f);
}

}  // namespace qdot

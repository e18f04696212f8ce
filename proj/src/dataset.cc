#include "wildlab/dataset.h"

#include <cstring>

#include "wildlab/binary_io.h"
#include "wildlab/errors.h"

namespace wildlab {
namespace {

thread_local bool g_membership_blind = false;

constexpr char kMagic[4] = {'W', 'D', 'S', '1'};
constexpr uint32_t kVersion = 1;
constexpr char kKeyMagic[4] = {'W', 'D', 'K', '1'};

void check_readable() {
  if (g_membership_blind) {
    throw MembershipAccessError(
        "membership tags read inside a membership-blind scope (scoring/selection)");
  }
}

bool valid_membership(uint8_t raw) {
  return raw == 0 || raw == 1 || raw == 2 || raw == 255;
}

}  // namespace

const char* membership_name(Membership m) {
  switch (m) {
    case Membership::kId:
      return "ID";
    case Membership::kCovariate:
      return "COV";
    case Membership::kSemantic:
      return "SEM";
    case Membership::kUnknown:
      return "UNKNOWN";
  }
  return "UNKNOWN";
}

MembershipBlindScope::MembershipBlindScope() : previous_(g_membership_blind) {
  g_membership_blind = true;
}

MembershipBlindScope::~MembershipBlindScope() { g_membership_blind = previous_; }

bool MembershipBlindScope::active() { return g_membership_blind; }

Dataset::Dataset(size_t dim, int num_classes) : dim_(dim), num_classes_(num_classes) {
  if (dim < 1) throw ValidationError("dataset dimension must be >= 1");
  if (num_classes < 2) throw ValidationError("dataset needs at least 2 classes");
}

void Dataset::set_label(size_t i, int32_t label) { labels_.at(i) = label; }

Membership Dataset::membership(size_t i) const {
  check_readable();
  return membership_.at(i);
}

std::span<const Membership> Dataset::memberships() const {
  check_readable();
  return membership_;
}

int32_t Dataset::true_label(size_t i) const {
  check_readable();
  const int32_t t = truth_.at(i);
  return t == kUnlabeled ? labels_[i] : t;
}

void Dataset::set_membership(size_t i, Membership m) { membership_.at(i) = m; }

bool Dataset::has_answer_key() const {
  for (int32_t t : truth_) {
    if (t != kUnlabeled) return true;
  }
  return false;
}

void Dataset::append(std::span<const float> x, int32_t label, Membership m, int32_t truth) {
  if (x.size() != dim_) {
    throw ValidationError("row has " + std::to_string(x.size()) + " features, dataset expects " +
                          std::to_string(dim_));
  }
  features_.insert(features_.end(), x.begin(), x.end());
  labels_.push_back(label);
  membership_.push_back(m);
  truth_.push_back(truth);
}

void Dataset::append(std::span<const double> x, int32_t label, Membership m, int32_t truth) {
  std::vector<float> row(x.begin(), x.end());
  append(std::span<const float>(row), label, m, truth);
}

void Dataset::reserve(size_t n) {
  features_.reserve(n * dim_);
  labels_.reserve(n);
  membership_.reserve(n);
  truth_.reserve(n);
}

Dataset Dataset::subset(std::span<const size_t> indices) const {
  Dataset out(dim_, num_classes_);
  out.reserve(indices.size());
  for (size_t i : indices) {
    if (i >= size()) {
      throw ValidationError("subset index " + std::to_string(i) + " out of range (n=" +
                            std::to_string(size()) + ")");
    }
    out.append(row(i), labels_[i], membership_[i], truth_[i]);
  }
  return out;
}

Dataset Dataset::concat(const Dataset& other) const {
  if (other.dim_ != dim_ || other.num_classes_ != num_classes_) {
    throw ValidationError("cannot concatenate datasets with different shapes");
  }
  Dataset out = *this;
  out.features_.insert(out.features_.end(), other.features_.begin(), other.features_.end());
  out.labels_.insert(out.labels_.end(), other.labels_.begin(), other.labels_.end());
  out.membership_.insert(out.membership_.end(), other.membership_.begin(),
                         other.membership_.end());
  out.truth_.insert(out.truth_.end(), other.truth_.begin(), other.truth_.end());
  return out;
}

void Dataset::validate() const {
  if (dim_ < 1) throw ValidationError("dataset dimension must be >= 1");
  if (num_classes_ < 2) throw ValidationError("dataset needs at least 2 classes");
  if (features_.size() != labels_.size() * dim_ || membership_.size() != labels_.size() ||
      truth_.size() != labels_.size()) {
    throw ValidationError("dataset arrays have inconsistent lengths");
  }
  for (size_t i = 0; i < labels_.size(); ++i) {
    const int32_t y = labels_[i];
    const Membership m = membership_[i];
    const bool is_class = y >= 0 && y < num_classes_;
    if (!is_class && y != kBottom && y != kUnlabeled) {
      throw ValidationError("row " + std::to_string(i) + " has invalid label " +
                            std::to_string(y));
    }
    if (m == Membership::kSemantic && is_class) {
      throw ValidationError("semantic row " + std::to_string(i) + " carries an ID class label");
    }
    if ((m == Membership::kId || m == Membership::kCovariate) && y == kBottom) {
      throw ValidationError("in-class row " + std::to_string(i) + " is labeled BOTTOM");
    }
    const int32_t t = truth_[i];
    const bool truth_is_class = t >= 0 && t < num_classes_;
    if (!truth_is_class && t != kBottom && t != kUnlabeled) {
      throw ValidationError("row " + std::to_string(i) + " has invalid answer key " +
                            std::to_string(t));
    }
    if (m == Membership::kSemantic && truth_is_class) {
      throw ValidationError("semantic row " + std::to_string(i) + " has an ID class answer key");
    }
    if ((m == Membership::kId || m == Membership::kCovariate) && t == kBottom) {
      throw ValidationError("in-class row " + std::to_string(i) + " has answer key BOTTOM");
    }
  }
}

std::string encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(ds.size()));
  w.u32(static_cast<uint32_t>(ds.dim()));
  w.u32(static_cast<uint32_t>(ds.num_classes()));
  for (float f : ds.features()) w.f32(f);
  for (int32_t y : ds.labels()) w.i32(y);
  for (Membership m : ds.membership_) w.u8(static_cast<uint8_t>(m));
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  ByteReader r(bytes, "WDS1");
  char magic[4];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("WDS1: bad magic bytes");
  const uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("WDS1: unsupported version " + std::to_string(version));
  const uint32_t n = r.u32();
  const uint32_t d = r.u32();
  const uint32_t c = r.u32();
  if (d < 1) throw FormatError("WDS1: dimension must be >= 1");
  if (c < 2) throw FormatError("WDS1: class count must be >= 2");
  const uint64_t expected = 20ULL + uint64_t{n} * d * 4 + uint64_t{n} * 4 + n;
  if (bytes.size() < expected) {
    throw FormatError("WDS1: truncated file (" + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected) + ")");
  }
  if (bytes.size() > expected) throw FormatError("WDS1: trailing bytes after payload");
  Dataset ds(d, static_cast<int>(c));
  ds.features_.resize(uint64_t{n} * d);
  for (float& f : ds.features_) f = r.f32();
  ds.labels_.resize(n);
  for (int32_t& y : ds.labels_) y = r.i32();
  ds.truth_.assign(n, kUnlabeled);
  ds.membership_.resize(n);
  for (Membership& m : ds.membership_) {
    const uint8_t raw = r.u8();
    if (!valid_membership(raw)) throw FormatError("WDS1: invalid membership code " + std::to_string(raw));
    m = static_cast<Membership>(raw);
  }
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("WDS1: ") + e.what());
  }
  return ds;
}

std::filesystem::path answer_key_path(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p += ".key";
  return p;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file(path, encode_dataset(ds));
  const std::filesystem::path key = answer_key_path(path);
  if (ds.has_answer_key()) {
    ByteWriter w;
    w.bytes(kKeyMagic, sizeof(kKeyMagic));
    w.u32(static_cast<uint32_t>(ds.size()));
    for (int32_t t : ds.truth_) w.i32(t);
    write_file(key, w.take());
  } else {
    std::error_code ec;
    std::filesystem::remove(key, ec);
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  Dataset ds = decode_dataset(read_file(path));
  const std::filesystem::path key = answer_key_path(path);
  if (!std::filesystem::exists(key)) return ds;
  const std::string bytes = read_file(key);
  ByteReader r(bytes, "WDK1");
  char magic[4];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kKeyMagic, sizeof(kKeyMagic)) != 0) {
    throw FormatError("WDK1: bad magic bytes");
  }
  const uint32_t n = r.u32();
  if (n != ds.size()) throw FormatError("WDK1: row count does not match the dataset");
  for (int32_t& t : ds.truth_) t = r.i32();
  if (r.remaining() != 0) throw FormatError("WDK1: trailing bytes after payload");
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("WDK1: ") + e.what());
  }
  return ds;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p += ".json";
  return p;
}

void write_manifest(const std::filesystem::path& dataset_path, const nlohmann::json& manifest) {
  write_file(manifest_path(dataset_path), manifest.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& dataset_path) {
  const std::string text = read_file(manifest_path(dataset_path));
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
}

}  // namespace wildlab

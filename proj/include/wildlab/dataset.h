#ifndef WILDLAB_DATASET_H_
#define WILDLAB_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace wildlab {

// Class label sentinels. Valid class labels are 0..C-1.
inline constexpr int32_t kBottom = -1;     // annotator's "none of the known classes"
inline constexpr int32_t kUnlabeled = -2;

enum class Membership : uint8_t {
  kId = 0,
  kCovariate = 1,
  kSemantic = 2,
  kUnknown = 255,
};

const char* membership_name(Membership m);

// While an instance is alive on the current thread, any read of ground-truth
// membership tags through Dataset throws MembershipAccessError. Scoring and
// selection code paths hold one so they provably never peek at the answer.
class MembershipBlindScope {
 public:
  MembershipBlindScope();
  ~MembershipBlindScope();
  MembershipBlindScope(const MembershipBlindScope&) = delete;
  MembershipBlindScope& operator=(const MembershipBlindScope&) = delete;

  static bool active();

 private:
  bool previous_;
};

// Row-major feature matrix with class labels and hidden membership tags.
//
// Features are stored as 32-bit floats so files are compact and reproducible;
// consumers widen to double for arithmetic.
class Dataset {
 public:
  Dataset() = default;
  Dataset(size_t dim, int num_classes);

  size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  size_t dim() const { return dim_; }
  int num_classes() const { return num_classes_; }

  std::span<const float> row(size_t i) const {
    return {features_.data() + i * dim_, dim_};
  }
  std::span<const float> features() const { return features_; }

  int32_t label(size_t i) const { return labels_[i]; }
  std::span<const int32_t> labels() const { return labels_; }
  void set_label(size_t i, int32_t label);

  // Audited accessors; throw inside a MembershipBlindScope.
  Membership membership(size_t i) const;
  std::span<const Membership> memberships() const;

  // Hidden answer key: the class (or BOTTOM) an oracle would assign, kept for
  // rows whose public label is withheld. Audited like membership. Falls back
  // to the public label when no key was recorded for the row.
  int32_t true_label(size_t i) const;
  void set_membership(size_t i, Membership m);
  bool has_answer_key() const;

  void append(std::span<const float> x, int32_t label, Membership m,
              int32_t truth = kUnlabeled);
  void append(std::span<const double> x, int32_t label, Membership m,
              int32_t truth = kUnlabeled);
  void reserve(size_t n);

  // Copies the listed rows (in the given order). Tags travel with their rows
  // without being inspected.
  Dataset subset(std::span<const size_t> indices) const;
  // Rows of `other` appended after this dataset's rows.
  Dataset concat(const Dataset& other) const;

  // Throws ValidationError when any structural invariant is violated.
  void validate() const;

  bool operator==(const Dataset& other) const = default;

 private:
  friend std::string encode_dataset(const Dataset& ds);
  friend Dataset decode_dataset(std::string_view bytes);
  friend void write_dataset(const Dataset& ds, const std::filesystem::path& path);
  friend Dataset read_dataset(const std::filesystem::path& path);

  size_t dim_ = 1;
  int num_classes_ = 2;
  std::vector<float> features_;
  std::vector<int32_t> labels_;
  std::vector<Membership> membership_;
  std::vector<int32_t> truth_;
};

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);

// WDS1 binary format (little-endian): "WDS1", u32 version, u32 n, u32 d,
// u32 C, n*d f32 features, n i32 labels, n u8 membership.
//
// The answer key is not part of WDS1. write_dataset puts it in a sidecar
// `<path>.key` ("WDK1", u32 n, n i32) when the dataset has one, and
// read_dataset picks the sidecar up when present.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Adjacent JSON manifest: `<path>.json`.
std::filesystem::path answer_key_path(const std::filesystem::path& dataset_path);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);
void write_manifest(const std::filesystem::path& dataset_path, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::filesystem::path& dataset_path);

}  // namespace wildlab

#endif  // WILDLAB_DATASET_H_

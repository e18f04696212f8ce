#ifndef WILDLAB_ANNOTATE_H_
#define WILDLAB_ANNOTATE_H_

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "wildlab/dataset.h"
#include "wildlab/errors.h"
#include "wildlab/select.h"

namespace wildlab {

// Annotated selection. `in_class` holds every row that received a class label
// in selection order and is what joint training consumes; `id_selected` and
// `cov_selected` split the same rows by hidden membership for diagnostics.
struct AnnotatedSets {
  Dataset id_selected;
  Dataset cov_selected;
  Dataset sem_selected;
  Dataset in_class;
};

// Labels every selected row with its answer key: the true class for ID and
// covariate rows, BOTTOM for semantic rows.
AnnotatedSets oracle_annotate(const Dataset& wild, const SelectionResult& selection);

struct LabelAssignment {
  size_t sample_id = 0;
  int32_t label = 0;  // 0..C-1 or kBottom
};

// Builds the sets from externally supplied labels. Rows whose label
// contradicts their hidden membership keep the label and lose the tag
// (UNKNOWN); such in-class rows are reported under cov_selected.
AnnotatedSets apply_labels(const Dataset& wild, const std::vector<LabelAssignment>& labels);

// Oracle labels as assignments, for driving a session programmatically.
std::vector<LabelAssignment> oracle_labels(const Dataset& wild, const SelectionResult& selection);

// 2-D coordinates shown to the annotator: raw coordinates when d = 2, else
// the projection onto the top two principal axes of the reference features.
class ContextProjection {
 public:
  ContextProjection() = default;
  explicit ContextProjection(const Dataset& reference);

  std::pair<double, double> project(std::span<const float> x) const;

 private:
  size_t dim_ = 0;
  std::vector<double> mean_;
  std::vector<double> axis1_, axis2_;
};

enum class SessionStatus { kOpen, kComplete };
const char* session_status_name(SessionStatus s);

struct AnnotationItem {
  size_t sample_id = 0;
  std::vector<float> features;
  double context_x = 0.0;
  double context_y = 0.0;
  double score = 0.0;
};

struct AnnotationSession {
  std::string session_id;
  std::vector<AnnotationItem> items;
  std::map<size_t, int32_t> received;
  SelectionResult selection;

  SessionStatus status() const;
};

struct ItemError {
  size_t index = 0;  // position in the submitted array
  std::optional<size_t> sample_id;
  std::string message;
};

// Thrown by submit_labels when any submitted item is invalid. Nothing from
// the batch is applied.
class LabelRejected : public ValidationError {
 public:
  explicit LabelRejected(std::vector<ItemError> errors);
  const std::vector<ItemError>& errors() const { return errors_; }

 private:
  std::vector<ItemError> errors_;
};

class UnknownSession : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SessionNotComplete : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Sessions over one wild dataset. Each session is persisted as a JSON-lines
// append log `<dir>/<session_id>.jsonl`; an existing directory is replayed on
// construction. Mutations are serialized per session, reads run concurrently.
class SessionStore {
 public:
  SessionStore(Dataset wild, std::filesystem::path dir, ContextProjection projection = {},
               std::vector<std::string> class_names = {});

  const Dataset& wild() const { return wild_; }
  int num_classes() const { return wild_.num_classes(); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  // Labeled reference points for the UI scatter plot.
  void set_reference(const Dataset& labeled, size_t max_points = 400);

  std::string open_session(const SelectionResult& selection);
  std::vector<std::string> list_sessions() const;
  AnnotationSession get(const std::string& id) const;
  AnnotationSession submit_labels(const std::string& id, const std::vector<LabelAssignment>& labels);
  AnnotatedSets export_session(const std::string& id, bool partial = false) const;
  std::vector<LabelAssignment> labels(const std::string& id, bool partial = false) const;

  // Blocks until the session is COMPLETE.
  void wait_complete(const std::string& id) const;

  nlohmann::json session_json(const AnnotationSession& s) const;
  nlohmann::json summary_json(const AnnotationSession& s) const;

 private:
  struct Entry {
    mutable std::mutex mu;
    mutable std::condition_variable cv;
    AnnotationSession session;
  };

  std::shared_ptr<Entry> find(const std::string& id) const;
  std::vector<AnnotationItem> build_items(const SelectionResult& selection) const;
  void append_log(const std::string& id, const nlohmann::json& line) const;
  void replay(const std::filesystem::path& log);

  Dataset wild_;
  std::filesystem::path dir_;
  ContextProjection projection_;
  std::vector<std::string> class_names_;
  nlohmann::json reference_ = nlohmann::json::array();

  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  size_t next_id_ = 1;
};

// Label values on the wire: 0..C-1 or the string "BOTTOM".
nlohmann::json label_to_json(int32_t label);
std::optional<int32_t> label_from_json(const nlohmann::json& j, int num_classes);

// HTTP front end:
//   GET  /api/sessions                 list
//   POST /api/sessions                 create from SelectionResult JSON
//   GET  /api/sessions/{id}            full state
//   POST /api/sessions/{id}/labels     [{sample_id, label}]
//   GET  /api/sessions/{id}/export     labels; ?partial=1 for OPEN sessions
class AnnotationServer {
 public:
  explicit AnnotationServer(SessionStore& store,
                            std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and starts serving on a background thread. Port 0 picks a free
  // port. Throws std::runtime_error when the address cannot be bound.
  void start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace wildlab

#endif  // WILDLAB_ANNOTATE_H_

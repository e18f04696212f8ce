#include "wildlab/annotate.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "wildlab/spectral.h"

namespace wildlab {

namespace {

// Appends one row with an annotator-supplied label to `dst`. A tag that
// contradicts the label is replaced by UNKNOWN so the dataset stays valid.
void append_labeled(Dataset& dst, const Dataset& wild, size_t i, int32_t label) {
  Membership m = wild.membership(i);
  const bool in_class = label != kBottom;
  if (in_class && m == Membership::kSemantic) m = Membership::kUnknown;
  if (!in_class && (m == Membership::kId || m == Membership::kCovariate)) m = Membership::kUnknown;
  dst.append(wild.row(i), label, m);
}

}  // namespace

AnnotatedSets apply_labels(const Dataset& wild, const std::vector<LabelAssignment>& labels) {
  AnnotatedSets out{Dataset(wild.dim(), wild.num_classes()), Dataset(wild.dim(), wild.num_classes()),
                    Dataset(wild.dim(), wild.num_classes()), Dataset(wild.dim(), wild.num_classes())};
  std::set<size_t> seen;
  for (const LabelAssignment& a : labels) {
    if (a.sample_id >= wild.size()) {
      throw ValidationError("annotation: sample id " + std::to_string(a.sample_id) +
                            " out of range (m=" + std::to_string(wild.size()) + ")");
    }
    if (!seen.insert(a.sample_id).second) {
      throw ValidationError("annotation: sample id " + std::to_string(a.sample_id) +
                            " labeled twice");
    }
    if (a.label != kBottom && (a.label < 0 || a.label >= wild.num_classes())) {
      throw ValidationError("annotation: label " + std::to_string(a.label) + " out of range");
    }
    if (a.label == kBottom) {
      append_labeled(out.sem_selected, wild, a.sample_id, a.label);
      continue;
    }
    append_labeled(out.in_class, wild, a.sample_id, a.label);
    if (wild.membership(a.sample_id) == Membership::kId) {
      append_labeled(out.id_selected, wild, a.sample_id, a.label);
    } else {
      append_labeled(out.cov_selected, wild, a.sample_id, a.label);
    }
  }
  return out;
}

std::vector<LabelAssignment> oracle_labels(const Dataset& wild, const SelectionResult& selection) {
  std::vector<LabelAssignment> out;
  out.reserve(selection.indices.size());
  for (size_t i : selection.indices) {
    if (i >= wild.size()) {
      throw ValidationError("oracle: selection index " + std::to_string(i) + " out of range (m=" +
                            std::to_string(wild.size()) + ")");
    }
    const Membership m = wild.membership(i);
    int32_t label = kBottom;
    if (m != Membership::kSemantic) {
      label = wild.true_label(i);
      if (label < 0) {
        throw ValidationError("oracle: wild row " + std::to_string(i) + " has no answer key");
      }
    }
    out.push_back({i, label});
  }
  return out;
}

AnnotatedSets oracle_annotate(const Dataset& wild, const SelectionResult& selection) {
  return apply_labels(wild, oracle_labels(wild, selection));
}

ContextProjection::ContextProjection(const Dataset& reference) : dim_(reference.dim()) {
  if (reference.empty()) throw ValidationError("context projection: empty reference set");
  mean_.assign(dim_, 0.0);
  if (dim_ == 2) return;
  for (size_t i = 0; i < reference.size(); ++i) {
    const auto x = reference.row(i);
    for (size_t j = 0; j < dim_; ++j) mean_[j] += x[j];
  }
  for (double& v : mean_) v /= static_cast<double>(reference.size());
  std::vector<double> centered(reference.size() * dim_);
  for (size_t i = 0; i < reference.size(); ++i) {
    const auto x = reference.row(i);
    for (size_t j = 0; j < dim_; ++j) centered[i * dim_ + j] = x[j] - mean_[j];
  }
  auto [a1, a2] = top_two_directions({centered, reference.size(), dim_});
  axis1_ = std::move(a1);
  axis2_ = std::move(a2);
}

std::pair<double, double> ContextProjection::project(std::span<const float> x) const {
  if (dim_ == 0) return {0.0, 0.0};
  if (x.size() != dim_) throw ValidationError("context projection: dimension mismatch");
  if (dim_ == 2) return {x[0], x[1]};
  double a = 0.0, b = 0.0;
  for (size_t j = 0; j < dim_; ++j) {
    const double c = x[j] - mean_[j];
    a += c * axis1_[j];
    b += c * axis2_[j];
  }
  return {a, b};
}

const char* session_status_name(SessionStatus s) {
  return s == SessionStatus::kComplete ? "COMPLETE" : "OPEN";
}

SessionStatus AnnotationSession::status() const {
  return received.size() == items.size() ? SessionStatus::kComplete : SessionStatus::kOpen;
}

namespace {

std::string describe(const std::vector<ItemError>& errors) {
  std::string msg = "rejected " + std::to_string(errors.size()) + " label(s)";
  if (!errors.empty()) msg += ": " + errors.front().message;
  return msg;
}

}  // namespace

LabelRejected::LabelRejected(std::vector<ItemError> errors)
    : ValidationError(describe(errors)), errors_(std::move(errors)) {}

nlohmann::json label_to_json(int32_t label) {
  if (label == kBottom) return "BOTTOM";
  return label;
}

std::optional<int32_t> label_from_json(const nlohmann::json& j, int num_classes) {
  if (j.is_string()) {
    if (j.get<std::string>() == "BOTTOM") return kBottom;
    return std::nullopt;
  }
  if (j.is_number_integer()) {
    const int64_t v = j.get<int64_t>();
    if (v >= 0 && v < num_classes) return static_cast<int32_t>(v);
  }
  return std::nullopt;
}

SessionStore::SessionStore(Dataset wild, std::filesystem::path dir, ContextProjection projection,
                           std::vector<std::string> class_names)
    : wild_(std::move(wild)),
      dir_(std::move(dir)),
      projection_(std::move(projection)),
      class_names_(std::move(class_names)) {
  if (class_names_.empty()) {
    for (int c = 0; c < wild_.num_classes(); ++c) class_names_.push_back("class " + std::to_string(c));
  }
  if (class_names_.size() != static_cast<size_t>(wild_.num_classes())) {
    throw ValidationError("session store: need one class name per class");
  }
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> logs;
  for (const auto& e : std::filesystem::directory_iterator(dir_)) {
    if (e.path().extension() == ".jsonl") logs.push_back(e.path());
  }
  std::sort(logs.begin(), logs.end());
  for (const auto& log : logs) replay(log);
}

void SessionStore::set_reference(const Dataset& labeled, size_t max_points) {
  nlohmann::json pts = nlohmann::json::array();
  const size_t n = labeled.size();
  const size_t stride = n > max_points && max_points > 0 ? (n + max_points - 1) / max_points : 1;
  for (size_t i = 0; i < n; i += stride) {
    const auto [x, y] = projection_.project(labeled.row(i));
    pts.push_back({{"x", x}, {"y", y}, {"label", label_to_json(labeled.label(i))}});
  }
  std::unique_lock lock(mu_);
  reference_ = std::move(pts);
}

std::vector<AnnotationItem> SessionStore::build_items(const SelectionResult& selection) const {
  std::vector<AnnotationItem> items;
  std::set<size_t> seen;
  for (size_t pos = 0; pos < selection.indices.size(); ++pos) {
    const size_t id = selection.indices[pos];
    if (id >= wild_.size()) {
      throw ValidationError("session: sample id " + std::to_string(id) + " out of range");
    }
    if (!seen.insert(id).second) throw ValidationError("session: duplicate sample id");
    AnnotationItem item;
    item.sample_id = id;
    const auto row = wild_.row(id);
    item.features.assign(row.begin(), row.end());
    std::tie(item.context_x, item.context_y) = projection_.project(row);
    item.score = pos < selection.scores.size() ? selection.scores[pos] : 0.0;
    items.push_back(std::move(item));
  }
  return items;
}

void SessionStore::append_log(const std::string& id, const nlohmann::json& line) const {
  const std::filesystem::path path = dir_ / (id + ".jsonl");
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw std::runtime_error("session store: cannot open " + path.string());
  const std::string text = line.dump() + "\n";
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  const bool flushed = std::fflush(f) == 0;
  std::fclose(f);
  if (!ok || !flushed) throw std::runtime_error("session store: write failed for " + path.string());
}

void SessionStore::replay(const std::filesystem::path& log) {
  std::ifstream in(log);
  std::string line;
  std::shared_ptr<Entry> entry;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      // A torn final line from a crash mid-append; everything before it holds.
      break;
    }
    const std::string type = j.value("type", "");
    if (type == "open") {
      entry = std::make_shared<Entry>();
      entry->session.session_id = j.at("session_id").get<std::string>();
      entry->session.selection = j.at("selection").get<SelectionResult>();
      entry->session.items = build_items(entry->session.selection);
    } else if (type == "labels" && entry) {
      for (const auto& a : j.at("labels")) {
        const auto label = label_from_json(a.at("label"), wild_.num_classes());
        if (label) entry->session.received[a.at("sample_id").get<size_t>()] = *label;
      }
    }
  }
  if (!entry) return;
  const std::string& id = entry->session.session_id;
  sessions_[id] = entry;
  size_t num = 0;
  if (std::sscanf(id.c_str(), "session-%zu", &num) == 1) next_id_ = std::max(next_id_, num + 1);
}

std::string SessionStore::open_session(const SelectionResult& selection) {
  auto entry = std::make_shared<Entry>();
  entry->session.selection = selection;
  entry->session.items = build_items(selection);
  std::unique_lock lock(mu_);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "session-%04zu", next_id_++);
  entry->session.session_id = buf;
  append_log(buf, {{"type", "open"}, {"session_id", buf}, {"selection", selection}});
  sessions_[buf] = entry;
  return buf;
}

std::vector<std::string> SessionStore::list_sessions() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw UnknownSession("unknown session '" + id + "'");
  return it->second;
}

AnnotationSession SessionStore::get(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  return e->session;
}

AnnotationSession SessionStore::submit_labels(const std::string& id,
                                              const std::vector<LabelAssignment>& labels) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  std::set<size_t> ids;
  for (const AnnotationItem& item : e->session.items) ids.insert(item.sample_id);
  std::vector<ItemError> errors;
  for (size_t k = 0; k < labels.size(); ++k) {
    const LabelAssignment& a = labels[k];
    if (!ids.count(a.sample_id)) {
      errors.push_back({k, a.sample_id, "sample " + std::to_string(a.sample_id) +
                                            " is not part of this session"});
    } else if (a.label != kBottom && (a.label < 0 || a.label >= wild_.num_classes())) {
      errors.push_back({k, a.sample_id, "label " + std::to_string(a.label) + " out of range"});
    }
  }
  if (!errors.empty()) throw LabelRejected(std::move(errors));
  nlohmann::json line = {{"type", "labels"}, {"labels", nlohmann::json::array()}};
  for (const LabelAssignment& a : labels) {
    line["labels"].push_back({{"sample_id", a.sample_id}, {"label", label_to_json(a.label)}});
  }
  append_log(id, line);
  for (const LabelAssignment& a : labels) e->session.received[a.sample_id] = a.label;
  if (e->session.status() == SessionStatus::kComplete) e->cv.notify_all();
  return e->session;
}

std::vector<LabelAssignment> SessionStore::labels(const std::string& id, bool partial) const {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  if (!partial && e->session.status() != SessionStatus::kComplete) {
    throw SessionNotComplete("session '" + id + "' is still OPEN; export it with the partial flag");
  }
  // Selection order, so the exported sets line up with the oracle's.
  std::vector<LabelAssignment> out;
  for (const AnnotationItem& item : e->session.items) {
    auto it = e->session.received.find(item.sample_id);
    if (it != e->session.received.end()) out.push_back({item.sample_id, it->second});
  }
  return out;
}

AnnotatedSets SessionStore::export_session(const std::string& id, bool partial) const {
  return apply_labels(wild_, labels(id, partial));
}

void SessionStore::wait_complete(const std::string& id) const {
  auto e = find(id);
  std::unique_lock lock(e->mu);
  e->cv.wait(lock, [&] { return e->session.status() == SessionStatus::kComplete; });
}

nlohmann::json SessionStore::summary_json(const AnnotationSession& s) const {
  return {{"session_id", s.session_id},
          {"status", session_status_name(s.status())},
          {"progress", {{"labeled", s.received.size()}, {"total", s.items.size()}}}};
}

nlohmann::json SessionStore::session_json(const AnnotationSession& s) const {
  nlohmann::json j = summary_json(s);
  j["num_classes"] = wild_.num_classes();
  j["class_names"] = class_names_;
  j["selection"] = {{"strategy", strategy_name(s.selection.strategy)},
                    {"k", s.selection.k},
                    {"tau_b", s.selection.tau_b ? nlohmann::json(*s.selection.tau_b) : nlohmann::json()},
                    {"lambda", s.selection.lambda ? nlohmann::json(*s.selection.lambda) : nlohmann::json()}};
  nlohmann::json items = nlohmann::json::array();
  for (const AnnotationItem& item : s.items) {
    auto it = s.received.find(item.sample_id);
    items.push_back({{"sample_id", item.sample_id},
                     {"features", item.features},
                     {"context", {{"x", item.context_x}, {"y", item.context_y}}},
                     {"score", item.score},
                     {"label", it == s.received.end() ? nlohmann::json() : label_to_json(it->second)}});
  }
  j["items"] = std::move(items);
  std::shared_lock lock(mu_);
  j["reference"] = reference_;
  return j;
}

struct AnnotationServer::Impl {
  httplib::Server svr;
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, {{"error", msg}});
}

}  // namespace

AnnotationServer::AnnotationServer(SessionStore& store,
                                   std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
  httplib::Server& svr = impl_->svr;
  SessionStore* st = &store;
  // httplib's defaults add SO_REUSEPORT, which lets a second server share a
  // busy port silently. Keep SO_REUSEADDR only.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });

  // Wraps a handler so store errors map onto HTTP statuses with JSON bodies.
  auto guarded = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const UnknownSession& e) {
        send_error(res, 404, e.what());
      } catch (const SessionNotComplete& e) {
        send_error(res, 409, e.what());
      } catch (const LabelRejected& e) {
        nlohmann::json errs = nlohmann::json::array();
        for (const ItemError& ie : e.errors()) {
          errs.push_back({{"index", ie.index},
                          {"sample_id", ie.sample_id ? nlohmann::json(*ie.sample_id) : nlohmann::json()},
                          {"message", ie.message}});
        }
        send_json(res, 400, {{"error", e.what()}, {"errors", errs}});
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, std::string("malformed JSON: ") + e.what());
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  };

  svr.Get("/api/sessions", guarded([st](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            for (const std::string& id : st->list_sessions()) list.push_back(st->summary_json(st->get(id)));
            send_json(res, 200, list);
          }));

  svr.Post("/api/sessions", guarded([st](const httplib::Request& req, httplib::Response& res) {
             const SelectionResult sel = nlohmann::json::parse(req.body).get<SelectionResult>();
             const std::string id = st->open_session(sel);
             send_json(res, 201, st->session_json(st->get(id)));
           }));

  svr.Get(R"(/api/sessions/([^/]+))",
          guarded([st](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, st->session_json(st->get(req.matches[1])));
          }));

  svr.Post(R"(/api/sessions/([^/]+)/labels)",
           guarded([st](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             st->get(id);  // 404 before body validation
             const nlohmann::json body = nlohmann::json::parse(req.body);
             if (!body.is_array()) throw ValidationError("labels body must be a JSON array");
             std::vector<LabelAssignment> labels;
             std::vector<ItemError> errors;
             for (size_t k = 0; k < body.size(); ++k) {
               const nlohmann::json& a = body[k];
               if (!a.is_object() || !a.contains("sample_id") || !a.contains("label") ||
                   !a["sample_id"].is_number_unsigned()) {
                 errors.push_back({k, std::nullopt, "item needs sample_id and label"});
                 continue;
               }
               const size_t sid = a["sample_id"].get<size_t>();
               const auto label = label_from_json(a["label"], st->num_classes());
               if (!label) {
                 errors.push_back({k, sid, "label must be 0.." + std::to_string(st->num_classes() - 1) +
                                               " or \"BOTTOM\""});
                 continue;
               }
               labels.push_back({sid, *label});
             }
             if (!errors.empty()) throw LabelRejected(std::move(errors));
             send_json(res, 200, st->session_json(st->submit_labels(id, labels)));
           }));

  svr.Get(R"(/api/sessions/([^/]+)/export)",
          guarded([st](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const std::string partial = req.get_param_value("partial");
            const bool is_partial = partial == "1" || partial == "true";
            nlohmann::json labels = nlohmann::json::array();
            for (const LabelAssignment& a : st->labels(id, is_partial)) {
              labels.push_back({{"sample_id", a.sample_id}, {"label", label_to_json(a.label)}});
            }
            const AnnotationSession s = st->get(id);
            send_json(res, 200,
                      {{"session_id", id},
                       {"status", session_status_name(s.status())},
                       {"partial", is_partial},
                       {"labels", labels}});
          }));

  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "not found");
  });

  if (static_dir) {
    if (!svr.set_mount_point("/", static_dir->string())) {
      throw ValidationError("static directory '" + static_dir->string() + "' does not exist");
    }
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::start(const std::string& host, int port) {
  if (thread_.joinable()) throw std::runtime_error("annotation server already running");
  httplib::Server& svr = impl_->svr;
  if (port == 0) {
    port_ = svr.bind_to_any_port(host);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host);
  } else {
    if (!svr.bind_to_port(host, port)) {
      throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) +
                               " (address in use?)");
    }
    port_ = port;
  }
  thread_ = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
}

void AnnotationServer::stop() {
  if (!thread_.joinable()) return;
  impl_->svr.stop();
  thread_.join();
}

}  // namespace wildlab

#include "ews/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "ews/cohort.hpp"
#include "ews/labeler.hpp"
#include "ews/util.hpp"

// After Eigen: resolv.h defines a macro named _res.
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ews::service {

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Durable replace: write, fsync, rename, fsync the directory.
void durable_write(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) fail(ErrorCode::kIo, "cannot write " + tmp.string());
  std::size_t off = 0;
  while (off < text.size()) {
    ssize_t n = ::write(fd, text.data() + off, text.size() - off);
    if (n <= 0) {
      ::close(fd);
      fail(ErrorCode::kIo, "write failed: " + tmp.string());
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail(ErrorCode::kIo, "fsync failed: " + tmp.string());
  }
  ::close(fd);
  fs::rename(tmp, path);
  int dfd = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  std::string s = iso8601(ms / 1000);
  char frac[8];
  std::snprintf(frac, sizeof(frac), ".%03d", static_cast<int>(ms % 1000));
  s.insert(s.size() - 1, frac);
  return s;
}

bool safe_id(const std::string& s) {
  static const std::regex re("^[A-Za-z0-9_.-]{1,128}$");
  return std::regex_match(s, re) && s != "." && s != "..";
}

}  // namespace

// ---- annotation types --------------------------------------------------

std::vector<AnnotationTypeDef> parse_annotation_types(const json& doc) {
  if (!doc.is_array()) fail(ErrorCode::kConfig, "annotation types must be a JSON array");
  std::vector<AnnotationTypeDef> out;
  std::set<std::string> seen;
  for (const auto& t : doc) {
    AnnotationTypeDef d;
    try {
      d.name = t.at("name").get<std::string>();
      d.color = t.value("color", std::string("#888888"));
      d.schema = t.value("schema", json::object());
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, std::string("annotation type: ") + e.what());
    }
    if (d.name.empty() || !seen.insert(d.name).second) {
      fail(ErrorCode::kConfig, "annotation type names must be unique and non-empty: '" + d.name + "'");
    }
    auto errs = schema::check_schema(d.schema);
    if (!errs.empty()) {
      fail(ErrorCode::kConfig, "annotation type '" + d.name + "' schema: " + errs[0].field + " " + errs[0].message);
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<AnnotationTypeDef> load_annotation_types(const fs::path& path) {
  try {
    return parse_annotation_types(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

// ---- annotations -------------------------------------------------------

json Annotation::to_json(std::optional<std::int64_t> epoch_s) const {
  json j{{"annotation_id", annotation_id},
         {"stay_id", stay_id},
         {"type", type},
         {"start_s", start_s},
         {"end_s", end_s},
         {"label", label},
         {"metadata", metadata},
         {"color", color ? json(*color) : json(nullptr)},
         {"created_at", created_at},
         {"updated_at", updated_at},
         {"version", version}};
  if (epoch_s) {
    j["start"] = iso8601(*epoch_s + start_s);
    j["end"] = iso8601(*epoch_s + end_s);
  }
  return j;
}

Annotation Annotation::from_json(const json& j) {
  Annotation a;
  a.annotation_id = j.at("annotation_id").get<std::string>();
  a.stay_id = j.at("stay_id").get<std::string>();
  a.type = j.at("type").get<std::string>();
  a.start_s = j.at("start_s").get<std::int64_t>();
  a.end_s = j.at("end_s").get<std::int64_t>();
  a.label = j.value("label", std::string());
  a.metadata = j.value("metadata", json::object());
  if (j.contains("color") && j["color"].is_string()) a.color = j["color"].get<std::string>();
  a.created_at = j.value("created_at", std::string());
  a.updated_at = j.value("updated_at", std::string());
  a.version = j.value("version", std::int64_t{1});
  return a;
}

ValidationError::ValidationError(std::vector<schema::FieldError> fields)
    : Error(ErrorCode::kSchema, fields.empty() ? "validation failed" : "validation failed: " + fields[0].field + " " + fields[0].message),
      fields_(std::move(fields)) {}

AnnotationStore::AnnotationStore(fs::path dir, std::vector<AnnotationTypeDef> types)
    : dir_(std::move(dir)), types_(std::move(types)) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    json doc;
    try {
      doc = json::parse(read_file(entry.path()));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kParse, entry.path().string() + ": " + e.what());
    }
    const auto stay = doc.at("stay_id").get<std::string>();
    for (const auto& a : doc.at("annotations")) {
      auto ann = Annotation::from_json(a);
      stay_of_[ann.annotation_id] = stay;
      by_stay_[stay].push_back(std::move(ann));
    }
  }
}

void AnnotationStore::validate(const Annotation& a) const {
  std::vector<schema::FieldError> errs;
  const AnnotationTypeDef* def = nullptr;
  for (const auto& t : types_) {
    if (t.name == a.type) def = &t;
  }
  if (!def) errs.push_back({"type", "unknown annotation type '" + a.type + "'"});
  if (a.start_s < 0) errs.push_back({"start_s", "must be >= 0"});
  if (a.end_s < a.start_s) errs.push_back({"end_s", "must be >= start_s"});
  if (def) {
    auto m = schema::validate(def->schema, a.metadata, "metadata");
    errs.insert(errs.end(), m.begin(), m.end());
  }
  if (!errs.empty()) throw ValidationError(std::move(errs));
}

namespace {

// Applies the client-editable fields of `payload` onto `a`.
void apply_payload(Annotation& a, const json& payload, bool require_all) {
  std::vector<schema::FieldError> errs;
  if (!payload.is_object()) throw ValidationError(std::vector<schema::FieldError>{{"(root)", "expected a JSON object"}});
  static const std::set<std::string> editable = {"type", "start_s", "end_s", "label", "metadata", "color"};
  static const std::set<std::string> server = {"annotation_id", "stay_id", "created_at", "updated_at",
                                               "version",       "start",   "end"};
  for (auto it = payload.begin(); it != payload.end(); ++it) {
    if (!editable.count(it.key()) && !server.count(it.key())) errs.push_back({it.key(), "is not an allowed property"});
  }
  if (require_all) {
    for (const char* k : {"type", "start_s", "end_s"}) {
      if (!payload.contains(k)) errs.push_back({k, "is required"});
    }
  }
  auto integer = [&](const char* k, std::int64_t& dst) {
    if (!payload.contains(k)) return;
    const auto& v = payload[k];
    if (v.is_number_integer()) dst = v.get<std::int64_t>();
    else if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>())) dst = static_cast<std::int64_t>(v.get<double>());
    else errs.push_back({k, "expected integer seconds"});
  };
  if (payload.contains("type")) {
    if (payload["type"].is_string()) a.type = payload["type"].get<std::string>();
    else errs.push_back({"type", "expected string"});
  }
  integer("start_s", a.start_s);
  integer("end_s", a.end_s);
  if (payload.contains("label")) {
    if (payload["label"].is_string()) a.label = payload["label"].get<std::string>();
    else errs.push_back({"label", "expected string"});
  }
  if (payload.contains("metadata")) {
    if (payload["metadata"].is_object()) a.metadata = payload["metadata"];
    else errs.push_back({"metadata", "expected object"});
  }
  if (payload.contains("color")) {
    if (payload["color"].is_null()) a.color.reset();
    else if (payload["color"].is_string()) a.color = payload["color"].get<std::string>();
    else errs.push_back({"color", "expected string or null"});
  }
  if (!errs.empty()) throw ValidationError(std::move(errs));
}

}  // namespace

std::string AnnotationStore::new_id() {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  for (;;) {
    std::string id = "ann-" + hex64(mix_seed(rng() ^ ++counter_)).substr(0, 12);
    if (!stay_of_.count(id)) return id;
  }
}

void AnnotationStore::persist(const std::string& stay_id) {
  json arr = json::array();
  for (const auto& a : by_stay_[stay_id]) arr.push_back(a.to_json());
  durable_write(dir_ / (stay_id + ".json"), json{{"stay_id", stay_id}, {"annotations", arr}}.dump(2) + "\n");
}

Annotation AnnotationStore::create(const std::string& stay_id, const json& payload) {
  Annotation a;
  a.stay_id = stay_id;
  apply_payload(a, payload, true);
  validate(a);
  std::unique_lock lock(mutex_);
  a.annotation_id = new_id();
  a.created_at = a.updated_at = now_iso();
  a.version = 1;
  auto& list = by_stay_[stay_id];
  list.push_back(a);
  try {
    persist(stay_id);
  } catch (...) {
    list.pop_back();
    throw;
  }
  stay_of_[a.annotation_id] = stay_id;
  return a;
}

std::optional<Annotation> AnnotationStore::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = stay_of_.find(id);
  if (it == stay_of_.end()) return std::nullopt;
  for (const auto& a : by_stay_.at(it->second)) {
    if (a.annotation_id == id) return a;
  }
  return std::nullopt;
}

Annotation AnnotationStore::update(const std::string& id, const json& payload) {
  std::unique_lock lock(mutex_);
  auto it = stay_of_.find(id);
  if (it == stay_of_.end()) fail(ErrorCode::kNotFound, "unknown annotation " + id);
  auto& list = by_stay_[it->second];
  auto pos = std::find_if(list.begin(), list.end(), [&](const Annotation& a) { return a.annotation_id == id; });
  if (!payload.is_object() || !payload.contains("version") || !payload["version"].is_number_integer()) {
    throw ValidationError(std::vector<schema::FieldError>{{"version", "is required for updates"}});
  }
  const auto version = payload["version"].get<std::int64_t>();
  if (version != pos->version) {
    fail(ErrorCode::kConflict, "annotation " + id + " is at version " + std::to_string(pos->version) +
                                   ", update was based on version " + std::to_string(version));
  }
  Annotation next = *pos;
  apply_payload(next, payload, false);
  validate(next);
  next.version = pos->version + 1;
  next.updated_at = now_iso();
  const Annotation prev = *pos;
  *pos = next;
  try {
    persist(next.stay_id);
  } catch (...) {
    *pos = prev;
    throw;
  }
  return next;
}

void AnnotationStore::remove(const std::string& id, std::optional<std::int64_t> version) {
  std::unique_lock lock(mutex_);
  auto it = stay_of_.find(id);
  if (it == stay_of_.end()) fail(ErrorCode::kNotFound, "unknown annotation " + id);
  const std::string stay = it->second;
  auto& list = by_stay_[stay];
  auto pos = std::find_if(list.begin(), list.end(), [&](const Annotation& a) { return a.annotation_id == id; });
  if (version && *version != pos->version) {
    fail(ErrorCode::kConflict, "annotation " + id + " is at version " + std::to_string(pos->version));
  }
  const Annotation prev = *pos;
  const auto index = pos - list.begin();
  list.erase(pos);
  try {
    persist(stay);
  } catch (...) {
    list.insert(list.begin() + index, prev);
    throw;
  }
  stay_of_.erase(id);
}

std::vector<Annotation> AnnotationStore::list(const AnnotationQuery& q) const {
  std::vector<Annotation> out;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [stay, anns] : by_stay_) {
      if (q.stay_id && *q.stay_id != stay) continue;
      for (const auto& a : anns) {
        if (q.type && a.type != *q.type) continue;
        if (q.from_s && a.end_s < *q.from_s) continue;
        if (q.to_s && a.start_s > *q.to_s) continue;
        out.push_back(a);
      }
    }
  }
  std::string key = q.sort;
  bool desc = false;
  if (!key.empty() && key[0] == '-') {
    desc = true;
    key = key.substr(1);
  }
  static const std::set<std::string> keys = {"start_s", "end_s", "type", "created_at", "label"};
  if (!keys.count(key)) throw ValidationError(std::vector<schema::FieldError>{{"sort", "unsupported sort key '" + q.sort + "'"}});
  auto tie = [](const Annotation& a) { return std::tie(a.stay_id, a.start_s, a.annotation_id); };
  std::stable_sort(out.begin(), out.end(), [&](const Annotation& a, const Annotation& b) {
    auto cmp = [&](const auto& x, const auto& y) { return desc ? y < x : x < y; };
    if (key == "start_s" && a.start_s != b.start_s) return cmp(a.start_s, b.start_s);
    if (key == "end_s" && a.end_s != b.end_s) return cmp(a.end_s, b.end_s);
    if (key == "type" && a.type != b.type) return cmp(a.type, b.type);
    if (key == "created_at" && a.created_at != b.created_at) return cmp(a.created_at, b.created_at);
    if (key == "label" && a.label != b.label) return cmp(a.label, b.label);
    return tie(a) < tie(b);
  });
  return out;
}

std::vector<Annotation> AnnotationStore::export_all() const {
  std::vector<Annotation> out;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [stay, anns] : by_stay_) out.insert(out.end(), anns.begin(), anns.end());
  }
  std::sort(out.begin(), out.end(), [](const Annotation& a, const Annotation& b) {
    return std::tie(a.stay_id, a.start_s, a.annotation_id) < std::tie(b.stay_id, b.start_s, b.annotation_id);
  });
  return out;
}

// ---- series ------------------------------------------------------------

std::vector<std::size_t> decimate_min_max(const std::vector<double>& values, std::size_t max_points) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx;
  if (max_points == 0 || n <= max_points) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  if (max_points == 1) {
    auto mn = std::min_element(values.begin(), values.end());
    return {static_cast<std::size_t>(mn - values.begin())};
  }
  const std::size_t groups = max_points / 2;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t lo = g * n / groups, hi = (g + 1) * n / groups;
    if (lo >= hi) continue;
    std::size_t mn = lo, mx = lo;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      if (values[i] < values[mn]) mn = i;
      if (values[i] > values[mx]) mx = i;
    }
    if (mn == mx) {
      idx.push_back(mn);
    } else {
      idx.push_back(std::min(mn, mx));
      idx.push_back(std::max(mn, mx));
    }
  }
  return idx;
}

// ---- HTTP service ------------------------------------------------------

namespace {

struct HttpError {
  int status;
  std::string message;
  json fields = nullptr;
};

[[noreturn]] void http_fail(int status, std::string message) { throw HttpError{status, std::move(message)}; }

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kSchema: return 422;
    case ErrorCode::kConfig:
    case ErrorCode::kDomain:
    case ErrorCode::kParse: return 400;
    default: return 500;
  }
}

std::optional<std::int64_t> int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  std::int64_t v = 0;
  if (!parse_int64(req.get_param_value(name), v)) http_fail(400, std::string("query parameter ") + name + " must be an integer");
  return v;
}

struct StayFiles {
  fs::path csv;
  fs::path predictions;
  fs::path events;
  fs::path pf;
  fs::path labels;
};

}  // namespace

struct MonitorService::Impl {
  ServiceConfig cfg;
  fs::path cohort_dir;
  std::int64_t epoch_s = 0;
  std::unique_ptr<AnnotationStore> store;
  httplib::Server server;
  std::thread thread;
  int bound_port = -1;

  std::string iso(std::int64_t t) const { return iso8601(epoch_s + t); }

  StayFiles files(const std::string& id) const {
    if (!safe_id(id)) http_fail(404, "unknown stay '" + id + "'");
    StayFiles f{cohort_dir / (id + ".csv"), cfg.data_dir / "predictions" / (id + ".csv"),
                cfg.data_dir / "labels" / (id + ".events.json"), cfg.data_dir / "labels" / (id + ".pf.csv"),
                cfg.data_dir / "labels" / (id + ".labels.csv")};
    if (!fs::is_regular_file(f.csv)) http_fail(404, "unknown stay '" + id + "'");
    return f;
  }

  GriddedStay load(const StayFiles& f) const {
    auto r = load_stay(f.csv, cfg.grid_step_s);
    if (r.cohort.stays.empty()) http_fail(500, "stay file unreadable: " + f.csv.filename().string());
    return std::move(r.cohort.stays.front());
  }

  std::vector<std::string> stay_ids() const {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(cohort_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  json describe(const std::string& id) const {
    const auto f = files(id);
    const auto stay = load(f);
    json channels = json::array();
    for (const auto& [cid, samples] : stay.raw) {
      channels.push_back({{"id", cid},
                          {"kind", "measured"},
                          {"n_samples", samples.size()},
                          {"first_s", samples.empty() ? json(nullptr) : json(samples.front().time_s)},
                          {"last_s", samples.empty() ? json(nullptr) : json(samples.back().time_s)}});
    }
    if (fs::exists(f.pf)) {
      for (const char* d : {"pao2_est", "fio2_est", "pf"}) channels.push_back({{"id", d}, {"kind", "derived"}});
    }
    std::size_t n_events = 0;
    if (fs::exists(f.events)) n_events = label::events_from_json(read_file(f.events)).size();
    json statics = json::object();
    for (const auto& [k, v] : stay.statics) statics[k] = v;
    return json{{"stay_id", stay.stay_id},
                {"length_s", stay.length_s},
                {"admission_time", iso(0)},
                {"discharge_time", iso(stay.length_s)},
                {"statics", statics},
                {"channels", channels},
                {"has_predictions", fs::exists(f.predictions)},
                {"n_events", n_events},
                {"n_annotations", store->list({id, std::nullopt, std::nullopt, std::nullopt, "start_s"}).size()}};
  }

  // time_s plus one value column of a pf.csv
  std::vector<std::pair<std::int64_t, double>> derived(const fs::path& pf, const std::string& column) const {
    std::istringstream in(read_file(pf));
    std::string line;
    std::getline(in, line);
    const auto header = split(trim(line), ',');
    auto col = std::find(header.begin(), header.end(), column);
    if (col == header.end()) http_fail(500, "derived channel missing from " + pf.filename().string());
    const auto c = static_cast<std::size_t>(col - header.begin());
    std::vector<std::pair<std::int64_t, double>> out;
    while (std::getline(in, line)) {
      auto fields = split(trim(line), ',');
      if (fields.size() <= c) continue;
      std::int64_t t = 0;
      double v = 0;
      if (!parse_int64(fields[0], t) || !parse_double(fields[c], v)) continue;
      out.emplace_back(t, v);
    }
    return out;
  }

  json series(const std::string& id, const httplib::Request& req) const {
    const auto f = files(id);
    const auto stay = load(f);
    const std::int64_t from = int_param(req, "from_s").value_or(0);
    const std::int64_t to = int_param(req, "to_s").value_or(stay.length_s);
    const auto max_points = int_param(req, "max_points").value_or(0);
    if (to < from) http_fail(400, "to_s must be >= from_s");
    if (max_points < 0) http_fail(400, "max_points must be >= 0");
    std::vector<std::string> wanted;
    if (req.has_param("channels") && !req.get_param_value("channels").empty()) {
      for (auto& c : split(req.get_param_value("channels"), ',')) {
        if (!trim(c).empty()) wanted.push_back(trim(c));
      }
    } else {
      for (const auto& [cid, s] : stay.raw) wanted.push_back(cid);
    }
    json out = json::array();
    for (const auto& cid : wanted) {
      std::vector<std::pair<std::int64_t, double>> pts;
      if (auto* raw = stay.raw_channel(cid)) {
        for (const auto& s : *raw) pts.emplace_back(s.time_s, s.value);
      } else if ((cid == "pao2_est" || cid == "fio2_est" || cid == "pf") && fs::exists(f.pf)) {
        pts = derived(f.pf, cid);
      } else {
        http_fail(404, "stay '" + id + "' has no channel '" + cid + "'");
      }
      std::vector<std::int64_t> ts;
      std::vector<double> vs;
      for (const auto& [t, v] : pts) {
        if (t < from || t > to) continue;
        ts.push_back(t);
        vs.push_back(v);
      }
      const auto keep = decimate_min_max(vs, static_cast<std::size_t>(max_points));
      json tj = json::array(), ij = json::array(), vj = json::array();
      for (auto k : keep) {
        tj.push_back(ts[k]);
        ij.push_back(iso(ts[k]));
        vj.push_back(vs[k]);
      }
      out.push_back({{"channel", cid},
                     {"n_total", vs.size()},
                     {"decimated", keep.size() < vs.size()},
                     {"time_s", tj},
                     {"time", ij},
                     {"value", vj}});
    }
    return json{{"stay_id", id}, {"from_s", from}, {"to_s", to}, {"series", out}};
  }

  json predictions(const std::string& id) const {
    const auto f = files(id);
    if (!fs::exists(f.predictions)) http_fail(404, "no predictions for stay '" + id + "'");
    std::istringstream in(read_file(f.predictions));
    std::string line;
    std::getline(in, line);
    json ts = json::array(), iso_ts = json::array(), sc = json::array(), gaps = json::array();
    std::optional<std::int64_t> gap_start;
    std::int64_t last_t = 0;
    auto close_gap = [&]() {
      if (gap_start) gaps.push_back({{"start_s", *gap_start}, {"end_s", last_t}, {"start", iso(*gap_start)}, {"end", iso(last_t)}});
      gap_start.reset();
    };
    while (std::getline(in, line)) {
      auto fields = split(trim(line), ',');
      if (fields.empty() || trim(fields[0]).empty()) continue;
      std::int64_t t = 0;
      if (!parse_int64(fields[0], t)) http_fail(500, "malformed predictions file for '" + id + "'");
      double v = 0;
      const bool has = fields.size() > 1 && parse_double(fields[1], v);
      ts.push_back(t);
      iso_ts.push_back(iso(t));
      if (has) {
        close_gap();
        sc.push_back(v);
      } else {
        if (!gap_start) gap_start = t;
        sc.push_back(nullptr);
      }
      last_t = t;
    }
    close_gap();
    return json{{"stay_id", id}, {"time_s", ts}, {"time", iso_ts}, {"score", sc}, {"gaps", gaps}};
  }

  json events(const std::string& id) const {
    const auto f = files(id);
    json arr = json::array();
    if (fs::exists(f.events)) {
      for (const auto& e : label::events_from_json(read_file(f.events))) {
        arr.push_back({{"start_s", e.start_s},
                       {"end_s", e.end_s},
                       {"duration_s", e.duration_s()},
                       {"start", iso(e.start_s)},
                       {"end", iso(e.end_s)}});
      }
    }
    return json{{"stay_id", id}, {"events", arr}};
  }

  json ann_list(const std::vector<Annotation>& v) const {
    json arr = json::array();
    for (const auto& a : v) arr.push_back(a.to_json(epoch_s));
    return arr;
  }

  static json parse_body(const httplib::Request& req) {
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      http_fail(400, std::string("request body is not valid JSON: ") + e.what());
    }
  }

  void route(const std::string& method, const std::string& pattern,
             std::function<std::pair<int, json>(const httplib::Request&)> fn) {
    auto handler = [fn](const httplib::Request& req, httplib::Response& res) {
      int status = 200;
      json body;
      try {
        std::tie(status, body) = fn(req);
      } catch (const HttpError& e) {
        status = e.status;
        body = {{"error", {{"status", e.status}, {"message", e.message}}}};
      } catch (const ValidationError& e) {
        status = 422;
        json fields = json::array();
        for (const auto& f : e.fields()) fields.push_back({{"field", f.field}, {"message", f.message}});
        body = {{"error", {{"status", 422}, {"message", e.what()}, {"fields", fields}}}};
      } catch (const Error& e) {
        status = status_for(e.code());
        body = {{"error", {{"status", status}, {"message", e.what()}}}};
      } catch (const std::exception& e) {
        status = 500;
        body = {{"error", {{"status", 500}, {"message", e.what()}}}};
      }
      res.status = status;
      if (status != 204) res.set_content(body.dump(), "application/json");
    };
    if (method == "GET") server.Get(pattern, handler);
    else if (method == "POST") server.Post(pattern, handler);
    else if (method == "PUT") server.Put(pattern, handler);
    else if (method == "DELETE") server.Delete(pattern, handler);
  }

  void install() {
    route("GET", "/api/patients", [this](const httplib::Request&) {
      json arr = json::array();
      for (const auto& id : stay_ids()) arr.push_back(describe(id));
      return std::pair{200, arr};
    });
    route("GET", R"(/api/patients/([^/]+))",
          [this](const httplib::Request& req) { return std::pair{200, describe(req.matches[1])}; });
    route("GET", R"(/api/patients/([^/]+)/series)",
          [this](const httplib::Request& req) { return std::pair{200, series(req.matches[1], req)}; });
    route("GET", R"(/api/patients/([^/]+)/predictions)",
          [this](const httplib::Request& req) { return std::pair{200, predictions(req.matches[1])}; });
    route("GET", R"(/api/patients/([^/]+)/events)",
          [this](const httplib::Request& req) { return std::pair{200, events(req.matches[1])}; });
    route("GET", R"(/api/patients/([^/]+)/annotations)", [this](const httplib::Request& req) {
      const std::string id = req.matches[1];
      files(id);
      AnnotationQuery q;
      q.stay_id = id;
      if (req.has_param("type")) q.type = req.get_param_value("type");
      q.from_s = int_param(req, "from_s");
      q.to_s = int_param(req, "to_s");
      if (req.has_param("sort")) q.sort = req.get_param_value("sort");
      return std::pair{200, ann_list(store->list(q))};
    });
    route("POST", R"(/api/patients/([^/]+)/annotations)", [this](const httplib::Request& req) {
      const std::string id = req.matches[1];
      files(id);
      return std::pair{201, store->create(id, parse_body(req)).to_json(epoch_s)};
    });
    route("GET", R"(/api/annotations/([^/]+))", [this](const httplib::Request& req) {
      auto a = store->get(req.matches[1]);
      if (!a) http_fail(404, "unknown annotation '" + std::string(req.matches[1]) + "'");
      return std::pair{200, a->to_json(epoch_s)};
    });
    route("PUT", R"(/api/annotations/([^/]+))", [this](const httplib::Request& req) {
      return std::pair{200, store->update(req.matches[1], parse_body(req)).to_json(epoch_s)};
    });
    route("DELETE", R"(/api/annotations/([^/]+))", [this](const httplib::Request& req) {
      store->remove(req.matches[1], int_param(req, "version"));
      return std::pair{204, json()};
    });
    route("GET", "/api/annotation-types", [this](const httplib::Request&) {
      json arr = json::array();
      for (const auto& t : store->types()) arr.push_back({{"name", t.name}, {"color", t.color}, {"schema", t.schema}});
      return std::pair{200, arr};
    });
    route("GET", "/api/export/annotations", [this](const httplib::Request&) {
      return std::pair{200, json{{"format", "ews-annotations"}, {"version", 1}, {"annotations", ann_list(store->export_all())}}};
    });
  }
};

MonitorService::MonitorService(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  auto& d = *impl_;
  d.cfg = std::move(config);
  if (!fs::is_directory(d.cfg.data_dir)) fail(ErrorCode::kIo, "data directory not readable: " + d.cfg.data_dir.string());
  d.cohort_dir = fs::is_directory(d.cfg.data_dir / "cohort") ? d.cfg.data_dir / "cohort" : d.cfg.data_dir;
  try {
    fs::directory_iterator probe(d.cohort_dir);
    (void)probe;
  } catch (const fs::filesystem_error& e) {
    fail(ErrorCode::kIo, std::string("data directory not readable: ") + e.what());
  }
  d.epoch_s = parse_iso8601(d.cfg.epoch);
  const fs::path types_path = d.cfg.annotation_types.empty() ? fs::path(EWS_DATA_DIR) / "annotation_types.json" : d.cfg.annotation_types;
  const fs::path store_dir = d.cfg.annotation_store.empty() ? d.cfg.data_dir / "annotations" : d.cfg.annotation_store;
  d.store = std::make_unique<AnnotationStore>(store_dir, load_annotation_types(types_path));
  const int threads = std::max(1, d.cfg.threads);
  d.server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  // No SO_REUSEPORT: a second instance on the same port must fail to bind.
  d.server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  d.install();
}

MonitorService::~MonitorService() { stop(); }

int MonitorService::bind() {
  auto& d = *impl_;
  if (d.cfg.port == 0) {
    d.bound_port = d.server.bind_to_any_port(d.cfg.host);
  } else {
    d.bound_port = d.server.bind_to_port(d.cfg.host, d.cfg.port) ? d.cfg.port : -1;
  }
  if (d.bound_port < 0) {
    fail(ErrorCode::kIo, "cannot bind " + d.cfg.host + ":" + std::to_string(d.cfg.port) + " (port busy or address invalid)");
  }
  return d.bound_port;
}

void MonitorService::listen() {
  if (impl_->bound_port < 0) fail(ErrorCode::kIo, "listen() before bind()");
  impl_->server.listen_after_bind();
}

int MonitorService::start() {
  const int p = bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return p;
}

void MonitorService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int MonitorService::port() const { return impl_->bound_port; }

}  // namespace ews::service

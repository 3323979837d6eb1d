#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cardiomesh/cohort.hpp"
#include "cardiomesh/contours.hpp"
#include "cardiomesh/fields.hpp"
#include "cardiomesh/frames.hpp"
#include "cardiomesh/heart_template.hpp"
#include "cardiomesh/phenotypes.hpp"
#include "cardiomesh/stats.hpp"
#include "cardiomesh/surfacefit.hpp"
#include "cardiomesh/volmesh.hpp"

namespace cardio {

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  double rv_thickness_mm = 3.0;
  double alpha_endo_deg = 60.0, alpha_epi_deg = -60.0;
  double beta_endo_deg = -65.0, beta_epi_deg = 25.0;
  double density_g_per_ml = 1.05;
  double procrustes_tol = 1e-6;
  int age_bin_start = 44, bmi_bin_start = 15;
  int min_bin_size = 3;
  double qc_k = 1.5;
  double lambda_smooth = 1.0;
  bool es_normalization = false;
};

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "load_config: document is not a JSON object");
  PipelineConfig c;
  std::map<std::string, std::function<void(const nlohmann::json&)>> setters;
  auto num = [](double& dst) {
    return [&dst](const nlohmann::json& v) {
      require(v.is_number(), "load_config: expected a number");
      dst = v.get<double>();
    };
  };
  auto integer = [](int& dst) {
    return [&dst](const nlohmann::json& v) {
      require(v.is_number_integer(), "load_config: expected an integer");
      dst = v.get<int>();
    };
  };
  setters["rv_thickness_mm"] = num(c.rv_thickness_mm);
  setters["alpha_endo_deg"] = num(c.alpha_endo_deg);
  setters["alpha_epi_deg"] = num(c.alpha_epi_deg);
  setters["beta_endo_deg"] = num(c.beta_endo_deg);
  setters["beta_epi_deg"] = num(c.beta_epi_deg);
  setters["density_g_per_ml"] = num(c.density_g_per_ml);
  setters["procrustes_tol"] = num(c.procrustes_tol);
  setters["age_bin_start"] = integer(c.age_bin_start);
  setters["bmi_bin_start"] = integer(c.bmi_bin_start);
  setters["min_bin_size"] = integer(c.min_bin_size);
  setters["qc_k"] = num(c.qc_k);
  setters["lambda_smooth"] = num(c.lambda_smooth);
  setters["es_normalization"] = [&c](const nlohmann::json& v) {
    require(v.is_boolean(), "load_config: es_normalization must be a boolean");
    c.es_normalization = v.get<bool>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto s = setters.find(it.key());
    require(s != setters.end(), "load_config: unknown key \"" + it.key() + "\"");
    try {
      s->second(it.value());
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " for key \"" + it.key() + "\"");
    }
  }
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("load_config: malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["rv_thickness_mm"] = c.rv_thickness_mm;
  j["alpha_endo_deg"] = c.alpha_endo_deg;
  j["alpha_epi_deg"] = c.alpha_epi_deg;
  j["beta_endo_deg"] = c.beta_endo_deg;
  j["beta_epi_deg"] = c.beta_epi_deg;
  j["density_g_per_ml"] = c.density_g_per_ml;
  j["procrustes_tol"] = c.procrustes_tol;
  j["age_bin_start"] = c.age_bin_start;
  j["bmi_bin_start"] = c.bmi_bin_start;
  j["min_bin_size"] = c.min_bin_size;
  j["qc_k"] = c.qc_k;
  j["lambda_smooth"] = c.lambda_smooth;
  j["es_normalization"] = c.es_normalization;
  return j;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
  std::string subject_id;
  std::string path_2ch, path_3ch, path_4ch, path_sax;  // empty = view absent
};

inline std::vector<ManifestRow> read_manifest_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "read_manifest_csv: cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "read_manifest_csv: empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  require(line == "subject_id,path_2ch,path_3ch,path_4ch,path_sax",
          "read_manifest_csv: unexpected header: " + line);
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow r;
    require(static_cast<bool>(std::getline(ss, r.subject_id, ',')),
            "read_manifest_csv: malformed row: " + line);
    std::getline(ss, r.path_2ch, ',');
    std::getline(ss, r.path_3ch, ',');
    std::getline(ss, r.path_4ch, ',');
    std::getline(ss, r.path_sax, ',');
    require(!r.subject_id.empty(), "read_manifest_csv: empty subject_id in row: " + line);
    require(seen.insert(r.subject_id).second,
            "read_manifest_csv: duplicate subject_id " + r.subject_id);
    rows.push_back(r);
  }
  return rows;
}

// Label coding convention for the ingested NIFTI masks, per view.
inline LabelMap default_label_map(View v) {
  switch (v) {
    case View::LAX2CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::LA_CAVITY, 4}};
    case View::LAX3CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3},
              {label::LA_CAVITY, 4}, {label::RA_CAVITY, 5}, {label::AORTA, 6}};
    case View::LAX4CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3},
              {label::LA_CAVITY, 4}, {label::RA_CAVITY, 5}};
    case View::SAX:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3}};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Mesh export

enum class ExportFormat { TEXT_TRIPLE, VTK_LEGACY };

// TEXT_TRIPLE: <prefix>.nodes / <prefix>.elems (+ <prefix>.fibers when fibers
// are given). VTK_LEGACY: <prefix>.vtk with CELL_DATA (region, fibers) and
// POINT_DATA (z, rho, phi, chamber) when fields are given.
inline void export_mesh(const TetMesh& mesh, ExportFormat format, const std::string& prefix,
                        const UVCField* uvc = nullptr, const FiberFrame* fibers = nullptr) {
  if (format == ExportFormat::TEXT_TRIPLE) {
    write_tet_nodes(mesh, prefix + ".nodes");
    write_tet_elements(mesh, prefix + ".elems");
    if (fibers) write_fibers(*fibers, prefix + ".fibers");
    return;
  }
  std::vector<NodalField> point_fields;
  if (uvc) point_fields = uvc_point_fields(*uvc);
  std::vector<std::pair<std::string, std::vector<Vec3>>> cell_vectors;
  if (fibers) {
    cell_vectors.push_back({"fiber", fibers->f});
    cell_vectors.push_back({"sheet", fibers->s});
  }
  write_tet_vtk(mesh, prefix + ".vtk", point_fields, cell_vectors);
}

inline TetMesh read_text_triple(const std::string& prefix) {
  TetMesh m;
  {
    std::ifstream in(prefix + ".nodes");
    require(in.good(), "read_text_triple: cannot open " + prefix + ".nodes");
    int n = 0;
    require(static_cast<bool>(in >> n) && n >= 0, "read_text_triple: bad node count");
    m.nodes.resize(n);
    for (auto& p : m.nodes)
      require(static_cast<bool>(in >> p.x() >> p.y() >> p.z()),
              "read_text_triple: truncated nodes file");
  }
  {
    std::ifstream in(prefix + ".elems");
    require(in.good(), "read_text_triple: cannot open " + prefix + ".elems");
    int n = 0;
    require(static_cast<bool>(in >> n) && n >= 0, "read_text_triple: bad element count");
    m.tets.resize(n);
    m.region.resize(n);
    for (int e = 0; e < n; ++e) {
      std::string kind;
      int reg = 0;
      auto& t = m.tets[e];
      require(static_cast<bool>(in >> kind >> t[0] >> t[1] >> t[2] >> t[3] >> reg) &&
                  kind == "Tt",
              "read_text_triple: malformed element line");
      m.region[e] = static_cast<ElemRegion>(reg);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Per-subject run

struct SubjectOutcome {
  std::string subject_id;
  bool ok = false;
  bool cached = false;
  std::string category;  // missing-view / contour-fail / fit-fail / volumize-fail / qc-excluded
  std::string message;
  int stage_reached = 0;  // index into pipeline_stage_names()
  int ed = -1, es = -1;
  PhenotypeRecord mask_pheno, mesh_pheno;
  SurfaceMesh surface_ed;  // fitted + extruded, for the cohort stage
};

inline const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> names = {"manifest", "views",     "frames",
                                                 "contours", "fit",       "volumize",
                                                 "fields",   "phenotypes", "qc_pass"};
  return names;
}

namespace pipeline_detail {

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t hash_file(const std::string& path, uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

inline uint64_t subject_input_hash(const ManifestRow& row, const PipelineConfig& cfg) {
  std::string c = config_to_json(cfg).dump();
  uint64_t h = fnv1a64(c.data(), c.size());
  for (const std::string* p : {&row.path_2ch, &row.path_3ch, &row.path_4ch, &row.path_sax}) {
    h = fnv1a64(p->data(), p->size(), h);
    if (!p->empty()) h = hash_file(*p, h);
  }
  return h;
}

inline nlohmann::json pheno_to_json(const PhenotypeRecord& r) {
  nlohmann::json j;
  j["source"] = r.source;
  j["lvedv_ml"] = r.lvedv_ml;
  j["lvesv_ml"] = r.lvesv_ml;
  j["rvedv_ml"] = r.rvedv_ml;
  j["rvesv_ml"] = r.rvesv_ml;
  j["lvm_g"] = r.lvm_g;
  j["lvef_pct"] = r.lvef_pct;
  j["rvef_pct"] = r.rvef_pct;
  return j;
}

inline PhenotypeRecord pheno_from_json(const nlohmann::json& j, const std::string& subject) {
  PhenotypeRecord r;
  r.subject_id = subject;
  r.source = j.at("source").get<std::string>();
  r.lvedv_ml = j.at("lvedv_ml").get<double>();
  r.lvesv_ml = j.at("lvesv_ml").get<double>();
  r.rvedv_ml = j.at("rvedv_ml").get<double>();
  r.rvesv_ml = j.at("rvesv_ml").get<double>();
  r.lvm_g = j.at("lvm_g").get<double>();
  r.lvef_pct = j.at("lvef_pct").get<double>();
  r.rvef_pct = j.at("rvef_pct").get<double>();
  return r;
}

// Fit one frame: contours + landmarks from every present view, rigid
// placement, iterative fit, RV epicardium extrusion.
inline SurfaceMesh fit_frame(const ViewSet& views, int frame, const TemplateModel& tmpl,
                             const PipelineConfig& cfg, std::vector<ContourSet>* contours_out) {
  std::vector<ContourSet> sets;
  for (const auto& [view, vol] : views.volumes) {
    ContourSet cs = extract_view_contours(vol, frame);
    if (view != View::SAX) extract_landmarks(vol, cs, frame);
    sets.push_back(std::move(cs));
  }
  if (contours_out) *contours_out = sets;
  SimilarityTransform t = rigid_init(tmpl.surface, sets);
  SurfaceMesh placed = apply_transform(tmpl.surface, t);
  FitConfig fc;
  fc.lambda_smooth = cfg.lambda_smooth;
  FitResult fit = fit_surface(placed, sets, fc);
  return extrude_rv_epicardium(fit.mesh, tmpl.rv_epi_source, cfg.rv_thickness_mm);
}

inline nlohmann::json surface_vertices_json(const SurfaceMesh& m) {
  auto arr = nlohmann::json::array();
  for (const auto& v : m.vertices) arr.push_back({v.x(), v.y(), v.z()});
  return arr;
}

}  // namespace pipeline_detail

// Run one subject end to end, writing artifacts under out_dir/<subject_id>/.
// Failures are reported in the outcome, never thrown. A subject whose inputs
// and config hash to the value recorded by a previous run is re-read from its
// subject.json instead of recomputed.
inline SubjectOutcome process_subject(const ManifestRow& row, const PipelineConfig& cfg,
                                      const TemplateModel& tmpl, const std::string& out_dir) {
  namespace fs = std::filesystem;
  using namespace pipeline_detail;
  SubjectOutcome out;
  out.subject_id = row.subject_id;
  fs::path dir = fs::path(out_dir) / row.subject_id;
  fs::create_directories(dir);

  uint64_t hash = 0;
  bool hash_ok = false;
  try {
    hash = subject_input_hash(row, cfg);
    hash_ok = true;
  } catch (const std::exception& e) {
    out.category = "missing-view";
    out.message = e.what();
    out.stage_reached = 0;
    return out;
  }

  // Cached result from an earlier run with identical inputs?
  fs::path subject_json = dir / "subject.json";
  if (hash_ok && fs::exists(subject_json)) {
    try {
      nlohmann::json j;
      std::ifstream in(subject_json);
      in >> j;
      if (j.at("input_hash").get<std::string>() == std::to_string(hash)) {
        out.cached = true;
        out.ok = j.at("ok").get<bool>();
        out.category = j.value("category", "");
        out.message = j.value("message", "");
        out.stage_reached = j.at("stage_reached").get<int>();
        out.ed = j.value("ed", -1);
        out.es = j.value("es", -1);
        if (out.ok) {
          out.mask_pheno = pheno_from_json(j.at("mask_phenotypes"), row.subject_id);
          out.mesh_pheno = pheno_from_json(j.at("mesh_phenotypes"), row.subject_id);
          out.surface_ed = tmpl.surface;
          int i = 0;
          for (const auto& p : j.at("surface_ed"))
            out.surface_ed.vertices[i++] =
                Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
          require(i == out.surface_ed.num_vertices(), "cached surface size mismatch");
        }
        return out;
      }
    } catch (const std::exception&) {
      // Unreadable or stale cache: fall through and recompute.
      out.cached = false;
    }
  }

  auto fail = [&](int stage, const std::string& category, const std::string& msg) {
    out.ok = false;
    out.stage_reached = stage;
    out.category = category;
    out.message = msg;
    return out;
  };
  auto persist = [&]() {
    nlohmann::json j;
    j["subject_id"] = row.subject_id;
    j["input_hash"] = std::to_string(hash);
    j["ok"] = out.ok;
    j["category"] = out.category;
    j["message"] = out.message;
    j["stage_reached"] = out.stage_reached;
    j["ed"] = out.ed;
    j["es"] = out.es;
    if (out.ok) {
      j["mask_phenotypes"] = pheno_to_json(out.mask_pheno);
      j["mesh_phenotypes"] = pheno_to_json(out.mesh_pheno);
      j["surface_ed"] = surface_vertices_json(out.surface_ed);
    }
    std::ofstream o(subject_json);
    o << j.dump(2) << "\n";
  };

  // Stage 1: load views.
  ViewSet views;
  views.subject_id = row.subject_id;
  try {
    const std::pair<View, const std::string*> wanted[] = {{View::LAX2CH, &row.path_2ch},
                                                          {View::LAX3CH, &row.path_3ch},
                                                          {View::LAX4CH, &row.path_4ch},
                                                          {View::SAX, &row.path_sax}};
    for (const auto& [view, path] : wanted)
      if (!path->empty()) views.add(read_nifti(*path, view, default_label_map(view)));
    require(views.get(View::SAX) != nullptr, "SAX view required");
    require(views.volumes.size() >= 2, "at least one LAX view required");
  } catch (const std::exception& e) {
    fail(0, "missing-view", e.what());
    persist();
    return out;
  }
  out.stage_reached = 1;

  // Stage 2: frame selection.
  try {
    out.ed = select_ed(views, EdPolicy::FirstFrame, cfg.es_normalization);
    out.es = select_es(views, cfg.es_normalization);
  } catch (const std::exception& e) {
    fail(1, "contour-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 2;

  // Stage 3+4: contours, landmarks and template fitting at ED and ES.
  SurfaceMesh fitted_es;
  std::vector<ContourSet> ed_contours;
  try {
    for (const auto& [view, vol] : views.volumes) {
      ContourSet cs = extract_view_contours(vol, out.ed);
      if (view != View::SAX) extract_landmarks(vol, cs, out.ed);
    }
  } catch (const std::exception& e) {
    fail(2, "contour-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 3;
  try {
    out.surface_ed = fit_frame(views, out.ed, tmpl, cfg, &ed_contours);
    fitted_es = out.ed == out.es ? out.surface_ed : fit_frame(views, out.es, tmpl, cfg, nullptr);
  } catch (const std::exception& e) {
    fail(3, "fit-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 4;
  for (const auto& cs : ed_contours) {
    std::ofstream o(dir / ("contours_ed_" + to_string(cs.view) + ".json"));
    o << to_json(cs).dump(2) << "\n";
  }
  write_surface_vtk(out.surface_ed, (dir / "surface_ed.vtk").string());

  // Stage 5: volumetric mesh.
  TetMesh volume;
  try {
    volume = harmonic_volumize(tmpl, out.surface_ed);
    auto q = element_quality(volume);
    require(q.nonpositive_volumes == 0, "volumized mesh has non-positive elements");
  } catch (const std::exception& e) {
    fail(4, "volumize-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 5;

  // Stage 6: UVC + fibers.
  UVCField uvc;
  FiberFrame fibers;
  try {
    uvc = compute_uvc(volume);
    FiberAngles angles;
    angles.alpha_endo_deg = cfg.alpha_endo_deg;
    angles.alpha_epi_deg = cfg.alpha_epi_deg;
    angles.beta_endo_deg = cfg.beta_endo_deg;
    angles.beta_epi_deg = cfg.beta_epi_deg;
    fibers = compute_fibers(volume, uvc, angles);
  } catch (const std::exception& e) {
    fail(5, "volumize-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 6;
  export_mesh(volume, ExportFormat::TEXT_TRIPLE, (dir / "mesh_ed").string(), &uvc, &fibers);
  export_mesh(volume, ExportFormat::VTK_LEGACY, (dir / "mesh_ed").string(), &uvc, &fibers);

  // Stage 7: phenotypes.
  try {
    out.mask_pheno = mask_phenotypes(*views.get(View::SAX), out.ed, out.es, cfg.density_g_per_ml);
    out.mask_pheno.subject_id = row.subject_id;
    out.mesh_pheno = mesh_phenotypes(out.surface_ed, fitted_es, cfg.density_g_per_ml);
    out.mesh_pheno.subject_id = row.subject_id;
  } catch (const std::exception& e) {
    fail(6, "volumize-fail", e.what());
    persist();
    return out;
  }
  out.stage_reached = 7;
  out.ok = true;
  persist();
  return out;
}

// ---------------------------------------------------------------------------
// Batch run

struct RunOptions {
  std::string out_dir;
  int workers = 1;
  bool reference_mode = false;  // forces single-threaded, deterministic order
  std::string demographics_csv;  // optional; enables the cohort stage
};

struct PipelineResult {
  std::vector<SubjectOutcome> subjects;                 // manifest order
  std::vector<std::pair<std::string, long>> attrition;  // stage name -> count
  QcResult qc;
  std::vector<BinReportRow> bins;
};

namespace pipeline_detail {

// Per-subject mesh-vs-mask relative differences for the QC filter; phenotypes
// with a zero mask value (e.g. absent RV) are skipped.
inline std::map<std::string, double> rel_diffs(const SubjectOutcome& s) {
  std::map<std::string, double> out;
  auto add = [&](const std::string& name, double mesh_v, double mask_v) {
    if (mask_v > 0) out[name] = relative_difference(mesh_v, mask_v);
  };
  add("lvedv_ml", s.mesh_pheno.lvedv_ml, s.mask_pheno.lvedv_ml);
  add("lvesv_ml", s.mesh_pheno.lvesv_ml, s.mask_pheno.lvesv_ml);
  add("rvedv_ml", s.mesh_pheno.rvedv_ml, s.mask_pheno.rvedv_ml);
  add("lvm_g", s.mesh_pheno.lvm_g, s.mask_pheno.lvm_g);
  return out;
}

inline void write_statistics_json(const std::vector<const SubjectOutcome*>& passed,
                                  const std::map<std::string, Demographics>& demo,
                                  const std::string& path) {
  nlohmann::json j;
  auto values = [&](auto getter) {
    std::vector<double> v;
    for (const auto* s : passed) v.push_back(getter(*s));
    return v;
  };
  struct Pheno {
    std::string name;
    double (*mesh)(const SubjectOutcome&);
    double (*mask)(const SubjectOutcome&);
  };
  const Pheno phenos[] = {
      {"lvedv_ml", [](const SubjectOutcome& s) { return s.mesh_pheno.lvedv_ml; },
       [](const SubjectOutcome& s) { return s.mask_pheno.lvedv_ml; }},
      {"lvesv_ml", [](const SubjectOutcome& s) { return s.mesh_pheno.lvesv_ml; },
       [](const SubjectOutcome& s) { return s.mask_pheno.lvesv_ml; }},
      {"lvm_g", [](const SubjectOutcome& s) { return s.mesh_pheno.lvm_g; },
       [](const SubjectOutcome& s) { return s.mask_pheno.lvm_g; }},
      {"lvef_pct", [](const SubjectOutcome& s) { return s.mesh_pheno.lvef_pct; },
       [](const SubjectOutcome& s) { return s.mask_pheno.lvef_pct; }},
  };
  std::vector<double> ages;
  std::vector<double> f_idx, m_idx;  // per-sex row indices into `passed`
  for (size_t i = 0; i < passed.size(); ++i) {
    auto it = demo.find(passed[i]->subject_id);
    if (it == demo.end()) continue;
    ages.push_back(it->second.age_years);
    (it->second.sex == 'F' ? f_idx : m_idx).push_back(static_cast<double>(i));
  }
  for (const auto& p : phenos) {
    nlohmann::json jp;
    std::vector<double> mesh_v = values(p.mesh), mask_v = values(p.mask);
    if (mesh_v.size() >= 2) {
      auto ba = bland_altman(mesh_v, mask_v);
      jp["bland_altman"] = {{"bias", ba.bias}, {"lower_loa", ba.lower_loa},
                            {"upper_loa", ba.upper_loa}};
    }
    if (ages.size() == mesh_v.size() && ages.size() >= 3) {
      try {
        auto ols = ols_regression(ages, mesh_v);
        jp["ols_vs_age"] = {{"slope", ols.slope}, {"intercept", ols.intercept},
                            {"p_value", ols.p_value}};
      } catch (const Error&) {
      }
    }
    if (!f_idx.empty() && !m_idx.empty()) {
      std::vector<double> f, m;
      for (double i : f_idx) f.push_back(p.mesh(*passed[static_cast<size_t>(i)]));
      for (double i : m_idx) m.push_back(p.mesh(*passed[static_cast<size_t>(i)]));
      auto mw = mann_whitney_u(f, m);
      jp["mann_whitney_f_vs_m"] = {{"u", mw.u}, {"p_value", mw.p_value}, {"exact", mw.exact}};
    }
    j[p.name] = std::move(jp);
  }
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace pipeline_detail

inline PipelineResult run_pipeline(const std::vector<ManifestRow>& manifest,
                                   const PipelineConfig& cfg, const RunOptions& opt,
                                   const TemplateModel& tmpl) {
  namespace fs = std::filesystem;
  using namespace pipeline_detail;
  fs::create_directories(opt.out_dir);

  PipelineResult res;
  res.subjects.resize(manifest.size());

  int workers = opt.reference_mode ? 1 : std::max(1, opt.workers);
  if (workers == 1 || manifest.size() <= 1) {
    for (size_t i = 0; i < manifest.size(); ++i)
      res.subjects[i] = process_subject(manifest[i], cfg, tmpl, opt.out_dir);
  } else {
    std::atomic<size_t> next{0};
    auto work = [&]() {
      for (size_t i = next.fetch_add(1); i < manifest.size(); i = next.fetch_add(1))
        res.subjects[i] = process_subject(manifest[i], cfg, tmpl, opt.out_dir);
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  // QC stage on mesh-vs-mask relative differences.
  std::map<std::string, std::map<std::string, double>> diffs;
  for (const auto& s : res.subjects)
    if (s.ok) diffs[s.subject_id] = rel_diffs(s);
  if (diffs.size() >= 4) {
    res.qc = qc_outlier_filter(diffs, cfg.qc_k);
    for (auto& s : res.subjects)
      if (s.ok && res.qc.excluded.count(s.subject_id)) {
        s.ok = false;
        s.category = "qc-excluded";
        s.message = "relative difference above Q3 + k*IQR";
      } else if (s.ok) {
        s.stage_reached = 8;
      }
  } else {
    // Too few subjects for a meaningful quartile filter: everyone passes.
    for (auto& s : res.subjects)
      if (s.ok) s.stage_reached = 8;
  }

  // Attrition table (monotone by construction: stage_reached is cumulative).
  const auto& names = pipeline_stage_names();
  for (size_t k = 0; k < names.size(); ++k) {
    long count = 0;
    for (const auto& s : res.subjects)
      if (s.stage_reached >= static_cast<int>(k)) ++count;
    res.attrition.push_back({names[k], count});
  }

  // Reports.
  {
    std::ofstream out(fs::path(opt.out_dir) / "summary.csv");
    out << "stage,count\n";
    for (const auto& [name, count] : res.attrition) out << name << "," << count << "\n";
  }
  {
    std::ofstream out(fs::path(opt.out_dir) / "status.jsonl");
    for (const auto& s : res.subjects) {
      nlohmann::json j;
      j["subject_id"] = s.subject_id;
      j["ok"] = s.ok;
      j["cached"] = s.cached;
      j["category"] = s.category;
      j["message"] = s.message;
      j["stage_reached"] = s.stage_reached;
      out << j.dump() << "\n";
    }
  }
  {
    std::vector<PhenotypeRecord> records;
    for (const auto& s : res.subjects)
      if (s.ok || s.category == "qc-excluded") {
        records.push_back(s.mask_pheno);
        records.push_back(s.mesh_pheno);
      }
    write_phenotypes_csv(records, res.qc.excluded,
                         (fs::path(opt.out_dir) / "phenotypes.csv").string());
  }

  // Cohort stage: binning, iterative mean, per-bin representatives.
  if (!opt.demographics_csv.empty()) {
    auto demo_rows = read_demographics_csv(opt.demographics_csv);
    std::map<std::string, Demographics> demo;
    for (const auto& d : demo_rows) demo[d.subject_id] = d;

    std::vector<const SubjectOutcome*> passed;
    for (const auto& s : res.subjects)
      if (s.ok) passed.push_back(&s);

    std::map<BinKey, std::vector<const SubjectOutcome*>> bins;
    for (const auto* s : passed) {
      auto it = demo.find(s->subject_id);
      if (it == demo.end()) continue;
      try {
        bins[assign_bin(it->second, cfg.age_bin_start, 85, cfg.bmi_bin_start, 50)].push_back(s);
      } catch (const Error&) {
        // Out-of-range demographics: subject keeps its mesh but joins no bin.
      }
    }

    if (passed.size() >= 2) {
      std::vector<SurfaceMesh> meshes;
      for (const auto* s : passed) meshes.push_back(s->surface_ed);
      SurfaceMesh reference = iterative_mean(meshes, cfg.procrustes_tol);
      write_surface_vtk(reference, (fs::path(opt.out_dir) / "cohort_mean.vtk").string());

      for (const auto& [key, members] : bins) {
        BinReportRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                         static_cast<int>(members.size()), false, ""};
        if (static_cast<int>(members.size()) < cfg.min_bin_size) {
          row.failure_reason = "fewer than " + std::to_string(cfg.min_bin_size) + " members";
        } else {
          std::vector<SurfaceMesh> ms;
          for (const auto* s : members) ms.push_back(s->surface_ed);
          SurfaceMesh rep = representative_surface(ms, reference);
          std::string stem = std::string("representative_") + std::get<0>(key) + "_" +
                             std::to_string(std::get<1>(key)) + "_" +
                             std::to_string(std::get<2>(key));
          write_surface_vtk(rep, (fs::path(opt.out_dir) / (stem + ".vtk")).string());
          row.emitted = true;
        }
        res.bins.push_back(row);
      }
    } else {
      for (const auto& [key, members] : bins)
        res.bins.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key),
                            static_cast<int>(members.size()), false,
                            "cohort too small for a reference mesh"});
    }
    write_bin_report_csv(res.bins, (fs::path(opt.out_dir) / "bins.csv").string());
    write_statistics_json(passed, demo, (fs::path(opt.out_dir) / "stats.json").string());
  }

  return res;
}

inline PipelineResult run_pipeline(const std::vector<ManifestRow>& manifest,
                                   const PipelineConfig& cfg, const RunOptions& opt) {
  TemplateModel tmpl = build_template();
  return run_pipeline(manifest, cfg, opt, tmpl);
}

}  // namespace cardio

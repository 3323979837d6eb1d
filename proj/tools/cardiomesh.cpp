// Command-line front end: per-stage subcommands plus the full batch run.
#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cardiomesh/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cardio;

namespace {

struct CommonOpts {
  std::string manifest;
  std::string config;
  std::string out_dir = "out";
  std::string demographics;
  int workers = 1;
  bool reference_mode = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_manifest = true) {
  auto* m = cmd->add_option("--manifest", o.manifest, "subject manifest CSV");
  if (need_manifest) m->required();
  cmd->add_option("--config", o.config, "pipeline config JSON");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--workers", o.workers, "worker threads for subject-level parallelism");
  cmd->add_flag("--reference-mode", o.reference_mode,
                "single-threaded deterministic run for byte-identical outputs");
}

PipelineConfig get_config(const CommonOpts& o) {
  return o.config.empty() ? PipelineConfig{} : load_config(o.config);
}

ViewSet load_views(const ManifestRow& row) {
  ViewSet views;
  views.subject_id = row.subject_id;
  const std::pair<View, const std::string*> wanted[] = {{View::LAX2CH, &row.path_2ch},
                                                        {View::LAX3CH, &row.path_3ch},
                                                        {View::LAX4CH, &row.path_4ch},
                                                        {View::SAX, &row.path_sax}};
  for (const auto& [view, path] : wanted)
    if (!path->empty()) views.add(read_nifti(*path, view, default_label_map(view)));
  return views;
}

// Per-subject loop with fault isolation; returns the number of failures.
template <typename Fn>
int for_each_subject(const CommonOpts& o, Fn&& fn) {
  auto rows = read_manifest_csv(o.manifest);
  fs::create_directories(o.out_dir);
  int failures = 0;
  for (const auto& row : rows) {
    try {
      fn(row);
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << row.subject_id << ": " << e.what() << "\n";
    }
  }
  return failures;
}

int cmd_frames(const CommonOpts& o, const PipelineConfig& cfg) {
  std::ofstream out(fs::path(o.out_dir) / "frames.csv");
  out << "subject_id,ed,es\n";
  return for_each_subject(o, [&](const ManifestRow& row) {
    ViewSet views = load_views(row);
    int ed = select_ed(views, EdPolicy::FirstFrame, cfg.es_normalization);
    int es = select_es(views, cfg.es_normalization);
    out << row.subject_id << "," << ed << "," << es << "\n";
    std::cout << row.subject_id << ": ED=" << ed << " ES=" << es << "\n";
  });
}

std::vector<ContourSet> subject_contours(const ViewSet& views, int frame) {
  std::vector<ContourSet> sets;
  for (const auto& [view, vol] : views.volumes) {
    ContourSet cs = extract_view_contours(vol, frame);
    if (view != View::SAX) extract_landmarks(vol, cs, frame);
    sets.push_back(std::move(cs));
  }
  return sets;
}

int cmd_contours(const CommonOpts& o, const PipelineConfig& cfg) {
  return for_each_subject(o, [&](const ManifestRow& row) {
    ViewSet views = load_views(row);
    int ed = select_ed(views, EdPolicy::FirstFrame, cfg.es_normalization);
    fs::path dir = fs::path(o.out_dir) / row.subject_id;
    fs::create_directories(dir);
    for (const auto& cs : subject_contours(views, ed)) {
      std::ofstream out(dir / ("contours_ed_" + to_string(cs.view) + ".json"));
      out << to_json(cs).dump(2) << "\n";
    }
    std::cout << row.subject_id << ": contours written\n";
  });
}

SurfaceMesh fit_subject_ed(const ViewSet& views, const TemplateModel& tmpl,
                           const PipelineConfig& cfg) {
  int ed = select_ed(views, EdPolicy::FirstFrame, cfg.es_normalization);
  auto sets = subject_contours(views, ed);
  SurfaceMesh placed = apply_transform(tmpl.surface, rigid_init(tmpl.surface, sets));
  FitConfig fc;
  fc.lambda_smooth = cfg.lambda_smooth;
  SurfaceMesh fitted = fit_surface(placed, sets, fc).mesh;
  return extrude_rv_epicardium(fitted, tmpl.rv_epi_source, cfg.rv_thickness_mm);
}

int cmd_fit(const CommonOpts& o, const PipelineConfig& cfg, const TemplateModel& tmpl) {
  return for_each_subject(o, [&](const ManifestRow& row) {
    SurfaceMesh fitted = fit_subject_ed(load_views(row), tmpl, cfg);
    fs::path dir = fs::path(o.out_dir) / row.subject_id;
    fs::create_directories(dir);
    write_surface_vtk(fitted, (dir / "surface_ed.vtk").string());
    write_surface_text(fitted, (dir / "surface_ed.txt").string());
    std::cout << row.subject_id << ": surface fitted\n";
  });
}

int cmd_volumize(const CommonOpts& o, const PipelineConfig& cfg, const TemplateModel& tmpl,
                 bool with_fields) {
  return for_each_subject(o, [&](const ManifestRow& row) {
    SurfaceMesh fitted = fit_subject_ed(load_views(row), tmpl, cfg);
    TetMesh volume = harmonic_volumize(tmpl, fitted);
    fs::path dir = fs::path(o.out_dir) / row.subject_id;
    fs::create_directories(dir);
    if (with_fields) {
      UVCField uvc = compute_uvc(volume);
      FiberAngles angles{cfg.alpha_endo_deg, cfg.alpha_epi_deg, cfg.beta_endo_deg,
                         cfg.beta_epi_deg};
      FiberFrame fibers = compute_fibers(volume, uvc, angles);
      export_mesh(volume, ExportFormat::TEXT_TRIPLE, (dir / "mesh_ed").string(), &uvc, &fibers);
      export_mesh(volume, ExportFormat::VTK_LEGACY, (dir / "mesh_ed").string(), &uvc, &fibers);
    } else {
      export_mesh(volume, ExportFormat::TEXT_TRIPLE, (dir / "mesh_ed").string());
      export_mesh(volume, ExportFormat::VTK_LEGACY, (dir / "mesh_ed").string());
    }
    std::cout << row.subject_id << ": volumetric mesh written\n";
  });
}

int cmd_phenotypes(const CommonOpts& o, const PipelineConfig& cfg, const TemplateModel& tmpl,
                   bool run_qc) {
  auto rows = read_manifest_csv(o.manifest);
  fs::create_directories(o.out_dir);
  std::vector<PhenotypeRecord> records;
  std::map<std::string, std::map<std::string, double>> diffs;
  int failures = 0;
  for (const auto& row : rows) {
    try {
      ViewSet views = load_views(row);
      require(views.get(View::SAX) != nullptr, "SAX view required");
      int ed = select_ed(views, EdPolicy::FirstFrame, cfg.es_normalization);
      int es = select_es(views, cfg.es_normalization);
      PhenotypeRecord mask = mask_phenotypes(*views.get(View::SAX), ed, es, cfg.density_g_per_ml);
      mask.subject_id = row.subject_id;
      SurfaceMesh ed_mesh = fit_subject_ed(views, tmpl, cfg);
      SurfaceMesh es_mesh = ed_mesh;
      if (es != ed) {
        auto sets = subject_contours(views, es);
        SurfaceMesh placed = apply_transform(tmpl.surface, rigid_init(tmpl.surface, sets));
        FitConfig fc;
        fc.lambda_smooth = cfg.lambda_smooth;
        es_mesh = extrude_rv_epicardium(fit_surface(placed, sets, fc).mesh, tmpl.rv_epi_source,
                                        cfg.rv_thickness_mm);
      }
      PhenotypeRecord mesh = mesh_phenotypes(ed_mesh, es_mesh, cfg.density_g_per_ml);
      mesh.subject_id = row.subject_id;
      records.push_back(mask);
      records.push_back(mesh);
      std::map<std::string, double> d;
      if (mask.lvedv_ml > 0) d["lvedv_ml"] = relative_difference(mesh.lvedv_ml, mask.lvedv_ml);
      if (mask.lvesv_ml > 0) d["lvesv_ml"] = relative_difference(mesh.lvesv_ml, mask.lvesv_ml);
      if (mask.rvedv_ml > 0) d["rvedv_ml"] = relative_difference(mesh.rvedv_ml, mask.rvedv_ml);
      if (mask.lvm_g > 0) d["lvm_g"] = relative_difference(mesh.lvm_g, mask.lvm_g);
      diffs[row.subject_id] = d;
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << row.subject_id << ": " << e.what() << "\n";
    }
  }
  std::set<std::string> excluded;
  if (run_qc && diffs.size() >= 4) {
    QcResult qc = qc_outlier_filter(diffs, cfg.qc_k);
    excluded = qc.excluded;
    nlohmann::json j;
    for (const auto& [name, t] : qc.threshold) j["threshold"][name] = t;
    j["excluded"] = std::vector<std::string>(qc.excluded.begin(), qc.excluded.end());
    std::ofstream out(fs::path(o.out_dir) / "qc.json");
    out << j.dump(2) << "\n";
  }
  write_phenotypes_csv(records, excluded, (fs::path(o.out_dir) / "phenotypes.csv").string());
  std::cout << records.size() / 2 << " subjects phenotyped, " << failures << " failed\n";
  return failures;
}

int cmd_run(const CommonOpts& o, const PipelineConfig& cfg, const TemplateModel& tmpl) {
  RunOptions ro;
  ro.out_dir = o.out_dir;
  ro.workers = o.workers;
  ro.reference_mode = o.reference_mode;
  ro.demographics_csv = o.demographics;
  auto result = run_pipeline(read_manifest_csv(o.manifest), cfg, ro, tmpl);
  std::cout << "stage,count\n";
  for (const auto& [name, count] : result.attrition) std::cout << name << "," << count << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biventricular mesh pipeline"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string template_path;
  app.add_option("--template", template_path, "template model JSON (default: built in)");

  auto* c_frames = app.add_subcommand("frames", "select ED/ES frames per subject");
  add_common(c_frames, o);
  auto* c_contours = app.add_subcommand("contours", "extract contours and landmarks at ED");
  add_common(c_contours, o);
  auto* c_fit = app.add_subcommand("fit", "fit the template surface at ED");
  add_common(c_fit, o);
  auto* c_volumize = app.add_subcommand("volumize", "deform the template tet mesh to the fit");
  add_common(c_volumize, o);
  auto* c_fields = app.add_subcommand("fields", "volumize plus UVC and fiber fields");
  add_common(c_fields, o);
  auto* c_pheno = app.add_subcommand("phenotypes", "mask and mesh phenotypes");
  add_common(c_pheno, o);
  auto* c_qc = app.add_subcommand("qc", "phenotypes plus the IQR outlier filter");
  add_common(c_qc, o);
  auto* c_cohort = app.add_subcommand("cohort", "full run including binned representatives");
  add_common(c_cohort, o);
  c_cohort->add_option("--demographics", o.demographics, "demographics CSV")->required();
  auto* c_run = app.add_subcommand("run", "full pipeline");
  add_common(c_run, o);
  c_run->add_option("--demographics", o.demographics, "demographics CSV (enables cohort stage)");

  auto* c_export = app.add_subcommand("export", "convert a TEXT_TRIPLE mesh to VTK");
  std::string export_prefix, export_out;
  c_export->add_option("--mesh", export_prefix, "input mesh prefix (.nodes/.elems)")->required();
  c_export->add_option("--out", export_out, "output VTK path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_export->parsed()) {
      TetMesh m = read_text_triple(export_prefix);
      write_tet_vtk(m, export_out);
      std::cout << "wrote " << export_out << "\n";
      return 0;
    }
    PipelineConfig cfg = get_config(o);
    TemplateModel tmpl = template_path.empty() ? build_template() : load_template(template_path);
    if (c_frames->parsed()) return cmd_frames(o, cfg);
    if (c_contours->parsed()) return cmd_contours(o, cfg);
    if (c_fit->parsed()) return cmd_fit(o, cfg, tmpl);
    if (c_volumize->parsed()) return cmd_volumize(o, cfg, tmpl, false);
    if (c_fields->parsed()) return cmd_volumize(o, cfg, tmpl, true);
    if (c_pheno->parsed()) return cmd_phenotypes(o, cfg, tmpl, false);
    if (c_qc->parsed()) return cmd_phenotypes(o, cfg, tmpl, true);
    if (c_cohort->parsed() || c_run->parsed()) return cmd_run(o, cfg, tmpl);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

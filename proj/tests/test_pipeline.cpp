#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cardiomesh/phantom.hpp"
#include "cardiomesh/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cardio;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Rasterize `count` phantom subjects at 2 mm into dir and return the manifest.
std::vector<ManifestRow> phantom_batch(const fs::path& dir, int count,
                                       std::vector<double>* es_scales = nullptr) {
  std::vector<ManifestRow> rows;
  for (int i = 0; i < count; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "ph%02d", i);
    PhantomSpec spec;
    double s = 0.95 + 0.02 * (i % 5);
    spec.lv_a *= s;
    spec.lv_b *= s;
    spec.lv_c *= s;
    double es = 0.78 + 0.01 * (i % 7);
    spec.frame_scale = {1.0, 0.9, es, 0.95};
    spec.sax_spacing_xy = spec.sax_spacing_z = 2.0;
    spec.lax_spacing = 2.0;
    if (es_scales) es_scales->push_back(es);
    auto phantom = synth_phantom(spec, id);
    fs::create_directories(dir / id);
    ManifestRow row;
    row.subject_id = id;
    for (const auto& [view, vol] : phantom.views.volumes) {
      std::string p = (dir / id / (to_string(view) + ".nii")).string();
      write_nifti(vol, p);
      if (view == View::LAX2CH) row.path_2ch = p;
      if (view == View::LAX3CH) row.path_3ch = p;
      if (view == View::LAX4CH) row.path_4ch = p;
      if (view == View::SAX) row.path_sax = p;
    }
    rows.push_back(row);
  }
  return rows;
}

const TemplateModel& tmpl() {
  static TemplateModel m = build_template();
  return m;
}

}  // namespace

TEST_CASE("config defaults and strict parsing") {
  PipelineConfig d = config_from_json(nlohmann::json::object());
  CHECK(d.rv_thickness_mm == 3.0);
  CHECK(d.alpha_endo_deg == 60.0);
  CHECK(d.alpha_epi_deg == -60.0);
  CHECK(d.beta_endo_deg == -65.0);
  CHECK(d.beta_epi_deg == 25.0);
  CHECK(d.density_g_per_ml == 1.05);
  CHECK(d.procrustes_tol == 1e-6);
  CHECK(d.age_bin_start == 44);
  CHECK(d.bmi_bin_start == 15);
  CHECK(d.min_bin_size == 3);
  CHECK(d.qc_k == 1.5);
  CHECK(d.lambda_smooth == 1.0);
  CHECK(d.es_normalization == false);

  PipelineConfig c = config_from_json({{"rv_thickness_mm", 2.5}});
  CHECK(c.rv_thickness_mm == 2.5);

  CHECK_THROWS_WITH_AS(config_from_json({{"rv_thicknes", 2.5}}),
                       "load_config: unknown key \"rv_thicknes\"", Error);
  CHECK_THROWS_AS(config_from_json({{"rv_thickness_mm", "thick"}}), Error);
  CHECK_THROWS_AS(config_from_json({{"es_normalization", 1.0}}), Error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), Error);

  TempDir td("cardio_cfg_test");
  {
    std::ofstream out(td.path / "cfg.json");
    out << "{\"lambda_smooth\": 4.0}";
  }
  CHECK(load_config((td.path / "cfg.json").string()).lambda_smooth == 4.0);
  {
    std::ofstream out(td.path / "bad.json");
    out << "{not json";
  }
  CHECK_THROWS_AS(load_config((td.path / "bad.json").string()), Error);
  CHECK_THROWS_AS(load_config((td.path / "missing.json").string()), Error);
}

TEST_CASE("manifest CSV parsing") {
  TempDir td("cardio_manifest_test");
  auto path = (td.path / "m.csv").string();
  {
    std::ofstream out(path);
    out << "subject_id,path_2ch,path_3ch,path_4ch,path_sax\n"
        << "s1,a.nii,b.nii,c.nii,d.nii\n"
        << "s2,,,,e.nii\n";
  }
  auto rows = read_manifest_csv(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].subject_id == "s1");
  CHECK(rows[0].path_3ch == "b.nii");
  CHECK(rows[1].path_2ch.empty());
  CHECK(rows[1].path_sax == "e.nii");

  {
    std::ofstream out(path);
    out << "subject,2ch,3ch,4ch,sax\ns1,a,b,c,d\n";
  }
  CHECK_THROWS_AS(read_manifest_csv(path), Error);
  {
    std::ofstream out(path);
    out << "subject_id,path_2ch,path_3ch,path_4ch,path_sax\ns1,a,b,c,d\ns1,a,b,c,d\n";
  }
  CHECK_THROWS_AS(read_manifest_csv(path), Error);
}

TEST_CASE("TEXT_TRIPLE export round trip") {
  TetMesh m;
  m.nodes = {Vec3(0, 0, 0), Vec3(1.2345675, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1),
             Vec3(1, 1, 1)};
  m.tets = {{0, 1, 2, 3}, {1, 2, 3, 4}};
  m.region = {ElemRegion::LV_MYO, ElemRegion::RV_MYO};

  TempDir td("cardio_export_test");
  auto prefix = (td.path / "m").string();
  export_mesh(m, ExportFormat::TEXT_TRIPLE, prefix);
  CHECK(!fs::exists(prefix + ".fibers"));  // no fibers given
  TetMesh back = read_text_triple(prefix);
  REQUIRE(back.num_nodes() == m.num_nodes());
  REQUIRE(back.tets == m.tets);
  REQUIRE(back.region == m.region);
  for (int i = 0; i < m.num_nodes(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(std::abs(back.nodes[i][d] - m.nodes[i][d]) <= 1e-6);  // 6-decimal text format

  export_mesh(m, ExportFormat::VTK_LEGACY, prefix);
  std::string vtk = slurp(prefix + ".vtk");
  CHECK(vtk.find("VECTORS fiber") == std::string::npos);  // no fiber arrays
  CHECK(vtk.find("POINT_DATA") == std::string::npos);

  FiberFrame fib;
  fib.f = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  fib.s = {Vec3(0, 1, 0), Vec3(0, 0, 1)};
  fib.n = {Vec3(0, 0, 1), Vec3(1, 0, 0)};
  export_mesh(m, ExportFormat::TEXT_TRIPLE, prefix, nullptr, &fib);
  CHECK(fs::exists(prefix + ".fibers"));
  export_mesh(m, ExportFormat::VTK_LEGACY, prefix, nullptr, &fib);
  CHECK(slurp(prefix + ".vtk").find("VECTORS fiber double") != std::string::npos);
}

TEST_CASE("run_pipeline on a small valid phantom batch") {
  TempDir in("cardio_pipe_in");
  TempDir outd("cardio_pipe_out");
  auto rows = phantom_batch(in.path, 3);

  RunOptions opt;
  opt.out_dir = (outd.path / "run").string();
  opt.reference_mode = true;
  auto res = run_pipeline(rows, PipelineConfig{}, opt, tmpl());

  REQUIRE(res.subjects.size() == 3);
  for (const auto& s : res.subjects) {
    CHECK(s.ok);
    CHECK(s.ed == 0);
    CHECK(s.es == 2);  // smallest frame scale
    CHECK(s.mask_pheno.lvedv_ml > 0);
    CHECK(s.mesh_pheno.lvedv_ml > 0);
    CHECK(s.mesh_pheno.lvef_pct > 0);
    fs::path dir = fs::path(opt.out_dir) / s.subject_id;
    CHECK(fs::exists(dir / "mesh_ed.nodes"));
    CHECK(fs::exists(dir / "mesh_ed.elems"));
    CHECK(fs::exists(dir / "mesh_ed.fibers"));
    CHECK(fs::exists(dir / "mesh_ed.vtk"));
    CHECK(fs::exists(dir / "surface_ed.vtk"));
    CHECK(fs::exists(dir / "subject.json"));
  }
  // Summary rows all equal the subject count on an all-valid batch.
  for (const auto& [stage, count] : res.attrition) CHECK(count == 3);
  CHECK(fs::exists(fs::path(opt.out_dir) / "summary.csv"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "phenotypes.csv"));

  SUBCASE("caching skips completed subjects") {
    auto res2 = run_pipeline(rows, PipelineConfig{}, opt, tmpl());
    for (const auto& s : res2.subjects) {
      CHECK(s.ok);
      CHECK(s.cached);
    }
    // Changing the config invalidates the cache.
    PipelineConfig cfg2;
    cfg2.rv_thickness_mm = 2.5;
    auto res3 = run_pipeline(rows, cfg2, opt, tmpl());
    for (const auto& s : res3.subjects) CHECK(!s.cached);
  }

  SUBCASE("worker pool gives the same outcomes") {
    RunOptions opt4;
    opt4.out_dir = (outd.path / "run_mt").string();
    opt4.workers = 4;
    auto res4 = run_pipeline(rows, PipelineConfig{}, opt4, tmpl());
    REQUIRE(res4.subjects.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(res4.subjects[i].subject_id == res.subjects[i].subject_id);
      CHECK(res4.subjects[i].ok);
      CHECK(res4.subjects[i].mesh_pheno.lvedv_ml ==
            doctest::Approx(res.subjects[i].mesh_pheno.lvedv_ml).epsilon(1e-12));
    }
  }
}

TEST_CASE("per-subject failures are isolated and categorized") {
  TempDir in("cardio_pipe_fail_in");
  TempDir outd("cardio_pipe_fail_out");
  auto rows = phantom_batch(in.path, 2);
  ManifestRow bad;
  bad.subject_id = "broken";
  bad.path_2ch = (in.path / "nope.nii").string();
  bad.path_sax = rows[0].path_sax;
  rows.push_back(bad);

  RunOptions opt;
  opt.out_dir = (outd.path / "run").string();
  opt.reference_mode = true;
  auto res = run_pipeline(rows, PipelineConfig{}, opt, tmpl());
  REQUIRE(res.subjects.size() == 3);
  CHECK(res.subjects[0].ok);
  CHECK(res.subjects[1].ok);
  CHECK(!res.subjects[2].ok);
  CHECK(res.subjects[2].category == "missing-view");
  // Attrition is monotone and drops by exactly one at the views stage.
  long prev = res.attrition.front().second;
  for (const auto& [stage, count] : res.attrition) {
    CHECK(count <= prev);
    prev = count;
  }
  CHECK(res.attrition[0].second == 3);
  CHECK(res.attrition[1].second == 2);
  CHECK(res.attrition.back().second == 2);
}

TEST_CASE("empty manifest yields an empty summary") {
  TempDir outd("cardio_pipe_empty");
  RunOptions opt;
  opt.out_dir = (outd.path / "run").string();
  auto res = run_pipeline({}, PipelineConfig{}, opt, tmpl());
  CHECK(res.subjects.empty());
  for (const auto& [stage, count] : res.attrition) CHECK(count == 0);
}

TEST_CASE("reference-mode reruns are byte identical") {
  TempDir in("cardio_pipe_det_in");
  TempDir outd("cardio_pipe_det_out");
  auto rows = phantom_batch(in.path, 2);

  auto run_into = [&](const std::string& name) {
    RunOptions opt;
    opt.out_dir = (outd.path / name).string();
    opt.reference_mode = true;
    run_pipeline(rows, PipelineConfig{}, opt, tmpl());
    return opt.out_dir;
  };
  auto a = run_into("a"), b = run_into("b");
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), a);
    CHECK(fs::exists(fs::path(b) / rel));
    CHECK(slurp(entry.path()) == slurp(fs::path(b) / rel));
    ++compared;
  }
  CHECK(compared > 10);
}

TEST_CASE("cohort stage emits bins, representatives and statistics") {
  TempDir in("cardio_pipe_cohort_in");
  TempDir outd("cardio_pipe_cohort_out");
  auto rows = phantom_batch(in.path, 6);
  auto demo_path = (in.path / "demographics.csv").string();
  {
    std::ofstream out(demo_path);
    out << "subject_id,sex,age_years,bmi_kg_m2\n";
    // Two bins of three: (F,50,25) and (M,60,30).
    for (int i = 0; i < 6; ++i) {
      char id[16];
      std::snprintf(id, sizeof(id), "ph%02d", i);
      if (i < 3)
        out << id << ",F,50." << i << ",25.4\n";
      else
        out << id << ",M,60." << i << ",30.1\n";
    }
  }
  RunOptions opt;
  opt.out_dir = (outd.path / "run").string();
  opt.reference_mode = true;
  opt.demographics_csv = demo_path;
  // A wide QC fence keeps the tiny 6-subject batch intact; QC behavior itself
  // is covered elsewhere.
  PipelineConfig cfg;
  cfg.qc_k = 100.0;
  auto res = run_pipeline(rows, cfg, opt, tmpl());
  for (const auto& s : res.subjects) CHECK(s.ok);

  REQUIRE(res.bins.size() == 2);
  for (const auto& b : res.bins) {
    CHECK(b.n_members == 3);
    CHECK(b.emitted);
  }
  CHECK(fs::exists(fs::path(opt.out_dir) / "cohort_mean.vtk"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "representative_F_50_25.vtk"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "representative_M_60_30.vtk"));
  CHECK(fs::exists(fs::path(opt.out_dir) / "bins.csv"));

  auto stats = slurp(fs::path(opt.out_dir) / "stats.json");
  CHECK(stats.find("bland_altman") != std::string::npos);
  CHECK(stats.find("ols_vs_age") != std::string::npos);
  CHECK(stats.find("mann_whitney_f_vs_m") != std::string::npos);
}

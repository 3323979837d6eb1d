#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cardiomesh/surface.hpp"

namespace cardio {

struct Demographics {
  std::string subject_id;
  char sex = 'F';  // 'F' or 'M'
  double age_years = 0;
  double bmi_kg_m2 = 0;
};

// (sex, age-bin start year, BMI-bin start kg/m2)
using BinKey = std::tuple<char, int, int>;

// Age bins start at 44 and end at 85; BMI bins start at 15 and end at 50;
// out-of-range subjects are rejected with a reason.
inline BinKey assign_bin(const Demographics& d, int age_start = 44, int age_end = 85,
                         int bmi_start = 15, int bmi_end = 50) {
  require(d.sex == 'F' || d.sex == 'M', "assign_bin: sex must be F or M (" + d.subject_id + ")");
  require(d.age_years > 0 && d.bmi_kg_m2 > 0, "assign_bin: non-positive demographics");
  int age = static_cast<int>(std::floor(d.age_years));
  int bmi = static_cast<int>(std::floor(d.bmi_kg_m2));
  require(age >= age_start && age <= age_end,
          "assign_bin: age out of binning range for " + d.subject_id);
  require(bmi >= bmi_start && bmi <= bmi_end,
          "assign_bin: BMI out of binning range for " + d.subject_id);
  return {d.sex, age, bmi};
}

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

struct ProcrustesResult {
  RigidTransform transform;  // maps src onto ref
  double distance = 0;       // RMS vertex residual after alignment, mm
};

// Optimal rotation + translation (no scaling) minimizing the summed squared
// vertex distance between corresponded meshes; reflections are corrected to
// proper rotations.
inline ProcrustesResult procrustes_align_pair(const SurfaceMesh& src, const SurfaceMesh& ref) {
  require(src.template_id == ref.template_id && src.num_vertices() == ref.num_vertices(),
          "procrustes_align_pair: meshes lack shared correspondence");
  int n = src.num_vertices();
  require(n >= 3, "procrustes_align_pair: too few vertices");
  Vec3 cs = Vec3::Zero(), cr = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    cs += src.vertices[i];
    cr += ref.vertices[i];
  }
  cs /= n;
  cr /= n;
  Mat3 cov = Mat3::Zero();
  for (int i = 0; i < n; ++i)
    cov += (ref.vertices[i] - cr) * (src.vertices[i] - cs).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  ProcrustesResult out;
  out.transform.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.transform.translation = cr - out.transform.rotation * cs;
  double ss = 0;
  for (int i = 0; i < n; ++i)
    ss += (out.transform.apply(src.vertices[i]) - ref.vertices[i]).squaredNorm();
  out.distance = std::sqrt(ss / n);
  return out;
}

inline SurfaceMesh apply_rigid(const SurfaceMesh& m, const RigidTransform& t) {
  SurfaceMesh out = m;
  for (auto& v : out.vertices) v = t.apply(v);
  for (auto& [name, a] : out.landmarks) a.position = t.apply(a.position);
  return out;
}

// Generalized Procrustes mean: seed with the first mesh, repeatedly align all
// meshes to the reference and replace it by the vertex-wise mean until the
// reference moves by at most tol (RMS mm).
inline SurfaceMesh iterative_mean(const std::vector<SurfaceMesh>& meshes, double tol = 1e-6,
                                  int max_outer_iters = 100, int* iters_out = nullptr) {
  require(meshes.size() >= 2, "iterative_mean: need at least 2 meshes");
  SurfaceMesh ref = meshes.front();
  for (int it = 0; it < max_outer_iters; ++it) {
    SurfaceMesh mean = ref;
    for (auto& v : mean.vertices) v = Vec3::Zero();
    for (const auto& m : meshes) {
      auto a = procrustes_align_pair(m, ref);
      for (int i = 0; i < m.num_vertices(); ++i)
        mean.vertices[i] += a.transform.apply(m.vertices[i]);
    }
    for (auto& v : mean.vertices) v /= static_cast<double>(meshes.size());
    double dist = procrustes_align_pair(mean, ref).distance;
    ref = mean;
    if (iters_out) *iters_out = it + 1;
    if (dist <= tol) return ref;
  }
  throw Error("iterative_mean: no convergence in " + std::to_string(max_outer_iters) +
              " outer iterations");
}

// Vertex-wise average of the bin members after aligning each to the
// cohort-wide reference. Volumetrization / fields are applied downstream.
inline SurfaceMesh representative_surface(const std::vector<SurfaceMesh>& members,
                                          const SurfaceMesh& cohort_reference) {
  require(members.size() >= 3, "representative_surface: bin has fewer than 3 members");
  SurfaceMesh mean = cohort_reference;
  for (auto& v : mean.vertices) v = Vec3::Zero();
  for (const auto& m : members) {
    auto a = procrustes_align_pair(m, cohort_reference);
    for (int i = 0; i < m.num_vertices(); ++i)
      mean.vertices[i] += a.transform.apply(m.vertices[i]);
  }
  for (auto& v : mean.vertices) v /= static_cast<double>(members.size());
  return mean;
}

// Demographics CSV: header subject_id,sex,age_years,bmi_kg_m2.
inline std::vector<Demographics> read_demographics_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "read_demographics_csv: cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "read_demographics_csv: empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  require(line == "subject_id,sex,age_years,bmi_kg_m2",
          "read_demographics_csv: unexpected header: " + line);
  std::vector<Demographics> out;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, sex, age, bmi;
    require(std::getline(ss, id, ',') && std::getline(ss, sex, ',') &&
                std::getline(ss, age, ',') && std::getline(ss, bmi, ','),
            "read_demographics_csv: malformed row: " + line);
    require(sex == "F" || sex == "M", "read_demographics_csv: bad sex for " + id);
    Demographics d;
    d.subject_id = id;
    d.sex = sex[0];
    try {
      d.age_years = std::stod(age);
      d.bmi_kg_m2 = std::stod(bmi);
    } catch (const std::exception&) {
      throw Error("read_demographics_csv: non-numeric field in row: " + line);
    }
    require(d.age_years > 0 && d.bmi_kg_m2 > 0,
            "read_demographics_csv: non-positive demographics for " + id);
    out.push_back(d);
  }
  return out;
}

struct BinReportRow {
  char sex;
  int age_bin, bmi_bin;
  int n_members;
  bool emitted;
  std::string failure_reason;  // empty when emitted
};

inline void write_bin_report_csv(const std::vector<BinReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_bin_report_csv: cannot open " + path);
  out << "sex,age_bin,bmi_bin,n_members,emitted,failure_reason\n";
  for (const auto& r : rows)
    out << r.sex << "," << r.age_bin << "," << r.bmi_bin << "," << r.n_members << ","
        << (r.emitted ? "true" : "false") << "," << r.failure_reason << "\n";
  require(out.good(), "write_bin_report_csv: write failure on " + path);
}

}  // namespace cardio

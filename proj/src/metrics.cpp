#include "voxreg/metrics.hpp"

#include <algorithm>
#include <set>

namespace voxreg {

std::vector<std::uint16_t> present_labels(const LabelMap& a, const LabelMap& b) {
  std::set<std::uint16_t> seen;
  for (Index i = 0; i < a.size(); ++i) seen.insert(a.array()(i));
  for (Index i = 0; i < b.size(); ++i) seen.insert(b.array()(i));
  seen.erase(0);  // background
  return std::vector<std::uint16_t>(seen.begin(), seen.end());
}

MetricReport dice(const LabelMap& a, const LabelMap& b,
                  const std::vector<std::uint16_t>& labels) {
  if (a.shape() != b.shape()) shape_error("dice: label maps must match");
  MetricReport report;
  double sum = 0.0;
  Index counted = 0;
  for (std::uint16_t label : labels) {
    Index na = 0, nb = 0, inter = 0;
    for (Index i = 0; i < a.size(); ++i) {
      const bool in_a = a.array()(i) == label;
      const bool in_b = b.array()(i) == label;
      na += in_a;
      nb += in_b;
      inter += in_a && in_b;
    }
    if (na + nb == 0) {
      report.undefined_labels.push_back(label);
      continue;
    }
    const double d = 2.0 * static_cast<double>(inter) /
                     static_cast<double>(na + nb);
    report.dice_per_label[label] = d;
    sum += d;
    ++counted;
  }
  report.dice_mean = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  return report;
}

namespace {

// Finite-difference derivative of component `comp` of phi = p + u along
// `axis` at (z,y,x): central inside, one-sided at the boundary. The identity
// part contributes 1 exactly when axis == comp.
double phi_derivative(const double* u, Index d, Index h, Index w, Index comp,
                      Index axis, Index z, Index y, Index x) {
  const Index vox = d * h * w;
  const double* uc = u + comp * vox;
  auto at = [&](Index zz, Index yy, Index xx) {
    return uc[(zz * h + yy) * w + xx];
  };
  Index pos[3] = {z, y, x};
  const Index len = axis == 0 ? d : (axis == 1 ? h : w);
  double du;
  if (len == 1) {
    du = 0.0;
  } else if (pos[axis] == 0) {
    Index hi[3] = {z, y, x};
    hi[axis] += 1;
    du = at(hi[0], hi[1], hi[2]) - at(z, y, x);
  } else if (pos[axis] == len - 1) {
    Index lo[3] = {z, y, x};
    lo[axis] -= 1;
    du = at(z, y, x) - at(lo[0], lo[1], lo[2]);
  } else {
    Index hi[3] = {z, y, x};
    Index lo[3] = {z, y, x};
    hi[axis] += 1;
    lo[axis] -= 1;
    du = 0.5 * (at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2]));
  }
  return du + (axis == comp ? 1.0 : 0.0);
}

}  // namespace

Tensor jacobian_determinant(const DeformationField& field) {
  if (field.rank() != 4 || field.dim(0) != 3) {
    shape_error("jacobian_determinant: field must be [3,D,H,W]");
  }
  const Index d = field.dim(1), h = field.dim(2), w = field.dim(3);
  const double* u = field.array().data();
  ArrayXd det(d * h * w);
  for (Index z = 0; z < d; ++z) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double j[3][3];
        for (Index comp = 0; comp < 3; ++comp) {
          for (Index axis = 0; axis < 3; ++axis) {
            j[comp][axis] = phi_derivative(u, d, h, w, comp, axis, z, y, x);
          }
        }
        det((z * h + y) * w + x) =
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
            j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
            j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
      }
    }
  }
  return Tensor(Shape{d, h, w}, std::move(det));
}

double njd_percent(const DeformationField& field) {
  Tensor det = jacobian_determinant(field);
  Index folded = 0;
  for (Index i = 0; i < det.size(); ++i) {
    if (det.array()(i) <= 0.0) ++folded;
  }
  return 100.0 * static_cast<double>(folded) / static_cast<double>(det.size());
}

}  // namespace voxreg

#pragma once

#include <cmath>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "robodet/detect.hpp"
#include "robodet/network.hpp"

namespace robodet {

struct LossWeights {
  double coord = 5.0;
  double obj = 1.0;
  double noobj = 0.5;
  double l1 = 0.0;
};

template <typename Scalar>
struct LossResult {
  double total = 0.0;
  double coord = 0.0;
  double obj = 0.0;
  double noobj = 0.0;
  double l1 = 0.0;
  int collisions = 0;  // same-class targets that fell into an occupied cell
  Tensor<Scalar> grad_lo;
  Tensor<Scalar> grad_hi;
};

namespace detail {

// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct Responsibility {
  EncodedTarget target;
  double area = 0.0;
};

}  // namespace detail

/// YOLO-style detection loss without a classification term, averaged over the batch.
///
/// Each target is owned by the cell containing its center, on the slot of its class
/// in the head that predicts that class. Coordinates regress σ(tx), σ(ty) against the
/// in-cell offset and tw, th against log(size / anchor); objectness is binary cross
/// entropy on σ(to). `lw.l1` adds λ·Σ|w| over all convolution weights to the loss value;
/// its gradient is applied to the weights by the trainer.
template <typename Scalar>
LossResult<Scalar> detection_loss(const RawOutputs<Scalar>& raw, std::span<const std::vector<Annotation>> targets,
                                  const Network<Scalar>& net, const LossWeights& lw) {
  const ModelSpec& spec = net.spec;
  const int batch = raw.lo.shape().n;
  if (static_cast<int>(targets.size()) != batch || raw.hi.shape().n != batch) {
    throw ShapeError("detection_loss: " + std::to_string(targets.size()) + " target lists for batch " +
                     std::to_string(batch));
  }
  const std::array<GridSize, 2> grids{spec.grid(spec.heads[0]), spec.grid(spec.heads[1])};
  const std::array<const Tensor<Scalar>*, 2> outputs{&raw.lo, &raw.hi};
  for (int h = 0; h < 2; ++h) {
    const Shape& s = outputs[h]->shape();
    if (s.c != HeadSpec::channels() || s.h != grids[h].rows || s.w != grids[h].cols) {
      throw ShapeError("detection_loss: head " + std::to_string(h) + " output " + to_string(s) +
                       " does not match grid");
    }
  }

  LossResult<Scalar> result;
  result.grad_lo = Tensor<Scalar>(raw.lo.shape());
  result.grad_hi = Tensor<Scalar>(raw.hi.shape());
  std::array<Tensor<Scalar>*, 2> grads{&result.grad_lo, &result.grad_hi};
  const double norm = 1.0 / batch;

  for (int n = 0; n < batch; ++n) {
    // (head, row, col, slot) -> owning target
    std::map<std::tuple<int, int, int, int>, detail::Responsibility> owners;
    for (const auto& gt : targets[n]) {
      const ClassSlot cs = slot_of(spec, gt.class_id);
      detail::Responsibility r{encode(gt, net.anchors, grids[cs.head]), gt.box.area()};
      const auto key = std::make_tuple(cs.head, r.target.row, r.target.col, cs.slot);
      auto [it, inserted] = owners.try_emplace(key, r);
      if (!inserted) {
        ++result.collisions;
        if (r.area > it->second.area) it->second = r;
      }
    }

    for (int h = 0; h < 2; ++h) {
      const Tensor<Scalar>& out = *outputs[h];
      Tensor<Scalar>& grad = *grads[h];
      for (int i = 0; i < grids[h].rows; ++i) {
        for (int j = 0; j < grids[h].cols; ++j) {
          for (int slot = 0; slot < HeadSpec::slots(); ++slot) {
            const int base = 5 * slot;
            const double to = out(n, base + 4, i, j);
            const double p_obj = sigmoid(to);
            const auto it = owners.find({h, i, j, slot});
            if (it == owners.end()) {
              result.noobj += lw.noobj * norm * detail::softplus(to);
              grad(n, base + 4, i, j) = static_cast<Scalar>(lw.noobj * norm * p_obj);
              continue;
            }
            const EncodedTarget& t = it->second.target;
            const double sx = sigmoid(static_cast<double>(out(n, base + 0, i, j)));
            const double sy = sigmoid(static_cast<double>(out(n, base + 1, i, j)));
            const double tw = out(n, base + 2, i, j);
            const double th = out(n, base + 3, i, j);
            const double ex = sx - t.tx;
            const double ey = sy - t.ty;
            const double ew = tw - t.tw;
            const double eh = th - t.th;
            result.coord += lw.coord * norm * (ex * ex + ey * ey + ew * ew + eh * eh);
            const double c = 2.0 * lw.coord * norm;
            grad(n, base + 0, i, j) = static_cast<Scalar>(c * ex * sx * (1.0 - sx));
            grad(n, base + 1, i, j) = static_cast<Scalar>(c * ey * sy * (1.0 - sy));
            grad(n, base + 2, i, j) = static_cast<Scalar>(c * ew);
            grad(n, base + 3, i, j) = static_cast<Scalar>(c * eh);
            result.obj += lw.obj * norm * detail::softplus(-to);
            grad(n, base + 4, i, j) = static_cast<Scalar>(lw.obj * norm * (p_obj - 1.0));
          }
        }
      }
    }
  }
  if (lw.l1 > 0.0) result.l1 = lw.l1 * l1_norm(net);
  result.total = result.coord + result.obj + result.noobj + result.l1;
  return result;
}

}  // namespace robodet

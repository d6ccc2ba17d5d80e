#pragma once

#include <algorithm>

#include "dsn/model.hpp"
#include "dsn/numkit.hpp"

namespace fixture {

using namespace dsn;

/// A small fully populated training batch: n image/sketch pairs over
/// `classes` categories, all four views, prototypes for most images and
/// teacher distributions for every row.
inline TrainingBatch small_batch(const ModelParams& params, std::size_t n, Rng& rng) {
  const ModelDims& d = params.dims;
  TrainingBatch b;
  b.tau = 0.07;
  b.image_x = Matrix(n, d.input);
  b.sketch_x = Matrix(n, d.input);
  for (double& x : b.image_x.values()) x = rng.normal();
  for (double& x : b.sketch_x.values()) x = rng.normal();
  const std::size_t classes = std::min(d.seen_classes, std::max<std::size_t>(1, n / 2));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    b.image_class.push_back(c);
    b.sketch_class.push_back(c);
    b.image_labels.push_back(static_cast<Label>(10 + c));
    b.sketch_labels.push_back(static_cast<Label>(10 + c));
  }
  b.views[0] = augment(b.image_x, rng, 0.1);
  b.views[1] = augment(b.image_x, rng, 0.1);
  b.views[2] = augment(b.sketch_x, rng, 0.1);
  b.views[3] = augment(b.sketch_x, rng, 0.1);
  b.prototypes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 4 == 3) continue;
    std::vector<double> p(d.embedding);
    for (double& x : p) x = rng.normal();
    b.prototypes[i] = p;
  }
  TeacherModel teacher = TeacherModel::random(d.input, d.teacher_classes, rng);
  b.teacher_probs = teacher_predict(teacher, vstack(b.image_x, b.sketch_x));
  return b;
}

inline ModelParams small_params(Rng& rng, std::size_t input, std::size_t hidden, std::size_t classes) {
  ModelDims dims{input, hidden, hidden, hidden, classes, 3};
  ModelParams p = ModelParams::init(dims, rng);
  // nonzero biases so their gradients are exercised too
  for (auto t : p.tensors()) {
    for (double& x : t) {
      if (x == 0.0) x = 0.05 * rng.normal();
    }
  }
  return p;
}

}  // namespace fixture

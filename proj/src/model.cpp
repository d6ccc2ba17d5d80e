#include "dsn/model.hpp"

#include <cmath>
#include <string>

#include "dsn/error.hpp"
#include "dsn/io.hpp"

namespace dsn {

namespace {

void require_cols(const Matrix& x, std::size_t cols, const char* who) {
  if (x.cols() != cols) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(who) + ": expected " +
                                                   std::to_string(cols) + " columns, got " +
                                                   std::to_string(x.cols()));
  }
}

Matrix gaussian(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.values()) x = scale * rng.normal();
  return m;
}

// x W^T + b
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
  Matrix out = matmul_bt(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return out;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Accumulates dW += dY^T X, db += colsum(dY), scaled by `scale`.
void accumulate_affine(const Matrix& dy, const Matrix& x, double scale, Matrix& dw,
                       std::vector<double>& db) {
  const Matrix g = matmul_at(dy, x);
  for (std::size_t k = 0; k < g.size(); ++k) dw.values()[k] += scale * g.values()[k];
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    auto r = dy.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) db[j] += scale * r[j];
  }
}

struct EncoderCache {
  Matrix x;
  Matrix pre;     // x W1^T + b1
  Matrix hidden;  // relu(pre)
  Matrix f;
};

EncoderCache encode_cached(const ModelParams& p, const Matrix& x) {
  require_cols(x, p.dims.input, "encode");
  EncoderCache c{x, affine(x, p.enc_w1, p.enc_b1), {}, {}};
  c.hidden = relu(c.pre);
  c.f = affine(c.hidden, p.enc_w2, p.enc_b2);
  return c;
}

void encoder_backward(const ModelParams& p, const EncoderCache& c, const Matrix& df,
                      GradientBundle& g) {
  accumulate_affine(df, c.hidden, 1.0, g.enc_w2, g.enc_b2);
  Matrix dpre = matmul(df, p.enc_w2);
  for (std::size_t k = 0; k < dpre.size(); ++k) {
    if (!(c.pre.values()[k] > 0.0)) dpre.values()[k] = 0.0;
  }
  accumulate_affine(dpre, c.x, 1.0, g.enc_w1, g.enc_b1);
}

struct ProjectionCache {
  Matrix f;
  Matrix pre;
  Matrix hidden;
  std::vector<double> norms;
  Matrix v;
};

ProjectionCache project_cached(const ModelParams& p, const Matrix& f) {
  require_cols(f, p.dims.embedding, "project");
  ProjectionCache c{f, affine(f, p.proj_w1, p.proj_b1), {}, {}, {}};
  c.hidden = relu(c.pre);
  c.v = affine(c.hidden, p.proj_w2, p.proj_b2);
  c.norms.resize(c.v.rows());
  for (std::size_t i = 0; i < c.v.rows(); ++i) {
    auto r = c.v.row(i);
    const double n = norm(r);
    if (!(n > 0.0)) {
      throw Error(ErrorCode::kZeroNorm,
                  "project: row " + std::to_string(i) + " is zero before normalization");
    }
    c.norms[i] = n;
    for (double& x : r) x /= n;
  }
  return c;
}

// Returns dL/df.
Matrix projection_backward(const ModelParams& p, const ProjectionCache& c, const Matrix& dv,
                           GradientBundle& g) {
  // v = z/|z|  =>  dz = (dv - v (v.dv)) / |z|
  Matrix dz(dv.rows(), dv.cols());
  for (std::size_t i = 0; i < dv.rows(); ++i) {
    auto v = c.v.row(i);
    auto d = dv.row(i);
    const double vd = dot(v, d);
    auto out = dz.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (d[j] - v[j] * vd) / c.norms[i];
  }
  accumulate_affine(dz, c.hidden, 1.0, g.proj_w2, g.proj_b2);
  Matrix dpre = matmul(dz, p.proj_w2);
  for (std::size_t k = 0; k < dpre.size(); ++k) {
    if (!(c.pre.values()[k] > 0.0)) dpre.values()[k] = 0.0;
  }
  accumulate_affine(dpre, c.f, 1.0, g.proj_w1, g.proj_b1);
  return matmul(dpre, p.proj_w1);
}

void add_scaled(Matrix& dst, const Matrix& src, double scale, std::size_t row_offset = 0) {
  for (std::size_t i = 0; i < src.rows(); ++i) {
    auto d = dst.row(i + row_offset);
    auto s = src.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) d[j] += scale * s[j];
  }
}

void check_batch(const TrainingBatch& b) {
  if (b.image_labels.size() != b.image_x.rows() || b.image_class.size() != b.image_x.rows() ||
      b.sketch_labels.size() != b.sketch_x.rows() || b.sketch_class.size() != b.sketch_x.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "batch: label counts do not match rows");
  }
  if (b.views[0].rows() != b.image_x.rows() || b.views[1].rows() != b.image_x.rows() ||
      b.views[2].rows() != b.sketch_x.rows() || b.views[3].rows() != b.sketch_x.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "batch: augmented views do not match rows");
  }
}

BackwardResult run(const ModelParams& params, const TrainingBatch& b, const LossWeights& w,
                   bool want_grad) {
  check_batch(b);
  BackwardResult out{{}, want_grad ? ModelParams::zeros(params.dims) : ModelParams{}};
  GradientBundle& g = out.grads;
  LossParts& parts = out.loss.parts;

  const std::size_t n_img = b.image_x.rows();
  const bool need_originals = w.lambda2 != 0.0 || w.lambda3 != 0.0;
  if (need_originals) {
    const EncoderCache enc = encode_cached(params, vstack(b.image_x, b.sketch_x));
    Matrix df(enc.f.rows(), enc.f.cols());

    if (w.lambda3 != 0.0) {
      std::vector<std::size_t> classes(b.image_class);
      classes.insert(classes.end(), b.sketch_class.begin(), b.sketch_class.end());
      const LossGrad cls = cls_loss(affine(enc.f, params.cls_w, params.cls_b), classes);
      const LossGrad ask = ask_loss(affine(enc.f, params.tea_w, params.tea_b), b.teacher_probs);
      parts.cls = cls.loss;
      parts.ask = ask.loss;
      if (want_grad) {
        accumulate_affine(cls.grad, enc.f, w.lambda3, g.cls_w, g.cls_b);
        accumulate_affine(ask.grad, enc.f, w.lambda3, g.tea_w, g.tea_b);
        add_scaled(df, matmul(cls.grad, params.cls_w), w.lambda3);
        add_scaled(df, matmul(ask.grad, params.tea_w), w.lambda3);
      }
    }

    if (w.lambda2 != 0.0) {
      Matrix f_img(n_img, enc.f.cols());
      for (std::size_t i = 0; i < n_img; ++i) {
        auto src = enc.f.row(i);
        std::copy(src.begin(), src.end(), f_img.row(i).begin());
      }
      const LossGrad ml = memory_loss(f_img, b.prototypes);
      parts.ml = ml.loss;
      if (want_grad) add_scaled(df, ml.grad, w.lambda2);
    }

    if (want_grad) encoder_backward(params, enc, df, g);
  }

  if (w.lambda1 != 0.0) {
    Matrix xv = vstack(vstack(b.views[0], b.views[1]), vstack(b.views[2], b.views[3]));
    const EncoderCache enc = encode_cached(params, xv);
    const ProjectionCache proj = project_cached(params, enc.f);
    ContrastiveBatch cb{proj.v, {}, b.tau};
    cb.labels.reserve(xv.rows());
    for (int view = 0; view < 2; ++view)
      cb.labels.insert(cb.labels.end(), b.image_labels.begin(), b.image_labels.end());
    for (int view = 0; view < 2; ++view)
      cb.labels.insert(cb.labels.end(), b.sketch_labels.begin(), b.sketch_labels.end());
    LossGrad cm = cmcm_loss(cb);
    parts.cmcm = cm.loss;
    if (want_grad) {
      for (double& x : cm.grad.values()) x *= w.lambda1;
      const Matrix df = projection_backward(params, proj, cm.grad, g);
      encoder_backward(params, enc, df, g);
    }
  }

  out.loss.total = total_loss(parts, w);
  return out;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& d) {
  ModelParams p;
  p.dims = d;
  p.enc_w1 = Matrix(d.hidden, d.input);
  p.enc_b1.assign(d.hidden, 0.0);
  p.enc_w2 = Matrix(d.embedding, d.hidden);
  p.enc_b2.assign(d.embedding, 0.0);
  p.proj_w1 = Matrix(d.proj_hidden, d.embedding);
  p.proj_b1.assign(d.proj_hidden, 0.0);
  p.proj_w2 = Matrix(kProjectionDim, d.proj_hidden);
  p.proj_b2.assign(kProjectionDim, 0.0);
  p.cls_w = Matrix(d.seen_classes, d.embedding);
  p.cls_b.assign(d.seen_classes, 0.0);
  p.tea_w = Matrix(d.teacher_classes, d.embedding);
  p.tea_b.assign(d.teacher_classes, 0.0);
  return p;
}

ModelParams ModelParams::init(const ModelDims& d, Rng& rng) {
  ModelParams p = zeros(d);
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  p.enc_w1 = gaussian(d.hidden, d.input, he(d.input), rng);
  p.enc_w2 = gaussian(d.embedding, d.hidden, he(d.hidden), rng);
  p.proj_w1 = gaussian(d.proj_hidden, d.embedding, he(d.embedding), rng);
  p.proj_w2 = gaussian(kProjectionDim, d.proj_hidden, he(d.proj_hidden), rng);
  p.cls_w = gaussian(d.seen_classes, d.embedding, he(d.embedding), rng);
  p.tea_w = gaussian(d.teacher_classes, d.embedding, he(d.embedding), rng);
  return p;
}

std::vector<std::span<double>> ModelParams::tensors() {
  return {enc_w1.values(), enc_b1, enc_w2.values(), enc_b2, proj_w1.values(), proj_b1,
          proj_w2.values(), proj_b2, cls_w.values(), cls_b, tea_w.values(), tea_b};
}

std::vector<std::span<const double>> ModelParams::tensors() const {
  return {enc_w1.values(), enc_b1, enc_w2.values(), enc_b2, proj_w1.values(), proj_b1,
          proj_w2.values(), proj_b2, cls_w.values(), cls_b, tea_w.values(), tea_b};
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

TeacherModel TeacherModel::random(std::size_t input, std::size_t classes, Rng& rng) {
  if (input == 0 || classes == 0) throw Error(ErrorCode::kInvalidArgument, "teacher: empty shape");
  return TeacherModel{gaussian(classes, input, 1.0 / std::sqrt(static_cast<double>(input)), rng),
                      std::vector<double>(classes, 0.0)};
}

Matrix encode(const ModelParams& params, const Matrix& x) { return encode_cached(params, x).f; }

Matrix project(const ModelParams& params, const Matrix& f) { return project_cached(params, f).v; }

Matrix classify_seen(const ModelParams& params, const Matrix& f) {
  require_cols(f, params.dims.embedding, "classify_seen");
  return affine(f, params.cls_w, params.cls_b);
}

Matrix classify_teacher_space(const ModelParams& params, const Matrix& f) {
  require_cols(f, params.dims.embedding, "classify_teacher_space");
  return affine(f, params.tea_w, params.tea_b);
}

Matrix teacher_predict(const TeacherModel& teacher, const Matrix& x) {
  require_cols(x, teacher.weights.cols(), "teacher_predict");
  Matrix logits = affine(x, teacher.weights, teacher.bias);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto p = softmax_row(logits.row(i));
    std::copy(p.begin(), p.end(), logits.row(i).begin());
  }
  return logits;
}

Matrix augment(const Matrix& x, Rng& rng, double strength, double mask_probability) {
  if (!(strength >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "augment: strength must be >= 0");
  Matrix out = x;
  for (double& v : out.values()) {
    v += strength * rng.normal();
    if (rng.bernoulli(mask_probability)) v = 0.0;
  }
  return out;
}

BackwardResult backward(const ModelParams& params, const TrainingBatch& batch,
                        const LossWeights& weights) {
  return run(params, batch, weights, true);
}

LossBreakdown forward_loss(const ModelParams& params, const TrainingBatch& batch,
                           const LossWeights& weights) {
  return run(params, batch, weights, false).loss;
}

std::string encode_checkpoint(const ModelParams& p) {
  io::Writer w;
  w.put_bytes("DSNC");
  w.put<std::uint32_t>(kCheckpointVersion);
  for (std::size_t d : {p.dims.input, p.dims.hidden, p.dims.embedding, p.dims.proj_hidden,
                        kProjectionDim, p.dims.seen_classes, p.dims.teacher_classes}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  for (auto t : p.tensors())
    for (double x : t) w.put<double>(x);
  return w.bytes();
}

ModelParams decode_checkpoint(const std::string& bytes) {
  io::Reader r(bytes);
  if (bytes.size() < 4 || r.get_bytes(4) != "DSNC") {
    throw Error(ErrorCode::kBadMagic, "bad magic: not a checkpoint file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) + " unsupported");
  }
  ModelDims d;
  d.input = r.get<std::uint32_t>();
  d.hidden = r.get<std::uint32_t>();
  d.embedding = r.get<std::uint32_t>();
  d.proj_hidden = r.get<std::uint32_t>();
  const auto proj_dim = r.get<std::uint32_t>();
  d.seen_classes = r.get<std::uint32_t>();
  d.teacher_classes = r.get<std::uint32_t>();
  if (proj_dim != kProjectionDim) {
    throw Error(ErrorCode::kParse, "checkpoint projection dimension " + std::to_string(proj_dim) +
                                       " != " + std::to_string(kProjectionDim));
  }
  for (std::size_t dim : {d.input, d.hidden, d.embedding, d.proj_hidden, d.seen_classes, d.teacher_classes}) {
    if (dim == 0 || dim > (1u << 20)) throw Error(ErrorCode::kParse, "checkpoint dimension out of range");
  }
  const std::size_t count = d.hidden * (d.input + 1) + d.embedding * (d.hidden + 1) +
                            d.proj_hidden * (d.embedding + 1) + kProjectionDim * (d.proj_hidden + 1) +
                            d.seen_classes * (d.embedding + 1) + d.teacher_classes * (d.embedding + 1);
  if (r.remaining() < count * sizeof(double)) {
    throw Error(ErrorCode::kTruncated, "truncated payload");
  }
  ModelParams p = ModelParams::zeros(d);
  if (r.remaining() > p.parameter_count() * sizeof(double)) {
    throw Error(ErrorCode::kCountMismatch, "checkpoint payload longer than declared dimensions");
  }
  for (auto t : p.tensors())
    for (double& x : t) x = r.get<double>();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace dsn

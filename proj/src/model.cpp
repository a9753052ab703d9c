#include "goodpoint/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "goodpoint/rng.hpp"

namespace goodpoint {

NetworkShape NetworkShape::standard() {
  NetworkShape s;
  s.backbone_channels = {64, 64, 64, 64, 128, 128, 128, 128};
  s.pool_after = {1, 3, 5};
  s.head_hidden = 256;
  s.descriptor_dim = 256;
  return s;
}

NetworkShape NetworkShape::reduced() {
  NetworkShape s;
  s.backbone_channels = {6, 10};
  s.pool_after = {0, 1, 1};  // two consecutive pools after the second conv
  s.head_hidden = 16;
  s.descriptor_dim = 24;
  return s;
}

namespace {

void check_shape(const NetworkShape& shape) {
  if (shape.backbone_channels.empty()) raise_runtime("network needs at least one backbone conv");
  if (shape.pool_after.size() != 3)
    raise_runtime("network must downsample by exactly 8 (three 2x2 pools)");
  for (int idx : shape.pool_after)
    if (idx < 0 || idx >= int(shape.backbone_channels.size()))
      raise_runtime("pool_after index out of range");
}

template <class T>
ConvLayer<T> make_layer(int in_ch, int out_ch, int ksize, Rng& rng) {
  ConvLayer<T> l;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.ksize = ksize;
  l.weight.resize(out_ch, in_ch * ksize * ksize);
  l.bias.resize(out_ch);
  // Fan-in scaled uniform init.
  const double bound = 1.0 / std::sqrt(double(in_ch) * ksize * ksize);
  for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      l.weight(i, j) = T(rng.uniform(-bound, bound));
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = T(rng.uniform(-bound, bound));
  return l;
}

template <class T>
ConvLayer<T> zero_layer(const ConvLayer<T>& like) {
  ConvLayer<T> l;
  l.in_channels = like.in_channels;
  l.out_channels = like.out_channels;
  l.ksize = like.ksize;
  l.weight = Mat<T>::Zero(like.weight.rows(), like.weight.cols());
  l.bias = Vec<T>::Zero(like.bias.size());
  return l;
}

}  // namespace

template <class T>
Network<T> make_network(const NetworkShape& shape, std::uint64_t seed) {
  check_shape(shape);
  Network<T> net;
  net.shape = shape;
  std::uint64_t layer_id = 0;
  auto next_rng = [&]() { return Rng::derive(seed, 0x6e6574 /* "net" */, layer_id++); };
  int in_ch = 1;
  for (int out_ch : shape.backbone_channels) {
    Rng r = next_rng();
    net.backbone.push_back(make_layer<T>(in_ch, out_ch, 3, r));
    in_ch = out_ch;
  }
  Rng r1 = next_rng();
  net.det_a = make_layer<T>(in_ch, shape.head_hidden, 3, r1);
  Rng r2 = next_rng();
  net.det_b = make_layer<T>(shape.head_hidden, kDetectorChannels, 1, r2);
  Rng r3 = next_rng();
  net.desc_a = make_layer<T>(in_ch, shape.head_hidden, 3, r3);
  Rng r4 = next_rng();
  net.desc_b = make_layer<T>(shape.head_hidden, shape.descriptor_dim, 1, r4);
  return net;
}

template <class T>
Network<T> zeros_like(const Network<T>& net) {
  Network<T> z;
  z.shape = net.shape;
  for (const auto& l : net.backbone) z.backbone.push_back(zero_layer(l));
  z.det_a = zero_layer(net.det_a);
  z.det_b = zero_layer(net.det_b);
  z.desc_a = zero_layer(net.desc_a);
  z.desc_b = zero_layer(net.desc_b);
  return z;
}

template <class T>
std::vector<std::pair<std::string, ConvLayer<T>*>> layer_refs(Network<T>& net) {
  std::vector<std::pair<std::string, ConvLayer<T>*>> refs;
  for (std::size_t i = 0; i < net.backbone.size(); ++i)
    refs.emplace_back("backbone." + std::to_string(i), &net.backbone[i]);
  refs.emplace_back("det_a", &net.det_a);
  refs.emplace_back("det_b", &net.det_b);
  refs.emplace_back("desc_a", &net.desc_a);
  refs.emplace_back("desc_b", &net.desc_b);
  return refs;
}

template <class T>
std::vector<std::pair<std::string, const ConvLayer<T>*>> layer_refs(const Network<T>& net) {
  std::vector<std::pair<std::string, const ConvLayer<T>*>> refs;
  for (auto& [name, layer] : layer_refs(const_cast<Network<T>&>(net))) refs.emplace_back(name, layer);
  return refs;
}

template <class T>
long long param_count(const Network<T>& net) {
  long long n = 0;
  for (const auto& [name, layer] : layer_refs(net)) n += layer->param_count();
  return n;
}

template <class U, class T>
Network<U> cast_network(const Network<T>& net) {
  Network<U> out;
  out.shape = net.shape;
  auto convert = [](const ConvLayer<T>& l) {
    ConvLayer<U> o;
    o.in_channels = l.in_channels;
    o.out_channels = l.out_channels;
    o.ksize = l.ksize;
    o.weight = l.weight.template cast<U>();
    o.bias = l.bias.template cast<U>();
    return o;
  };
  for (const auto& l : net.backbone) out.backbone.push_back(convert(l));
  out.det_a = convert(net.det_a);
  out.det_b = convert(net.det_b);
  out.desc_a = convert(net.desc_a);
  out.desc_b = convert(net.desc_b);
  return out;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

constexpr int kGemmSlice = 4096;  // pixels per im2col slice


template <class T>
void build_im2col(const Mat<T>& in, int h, int w, int n0, int s, Mat<T>& col) {
  const int c = int(in.rows());
  for (int j = 0; j < s; ++j) {
    const int p = n0 + j;
    const int y = p / w;
    const int x = p % w;
    T* dst = col.data() + std::size_t(j) * col.rows();
    int k = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      const int yy = y + dy;
      for (int dx = -1; dx <= 1; ++dx, ++k) {
        const int xx = x + dx;
        T* d = dst + std::size_t(k) * c;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
          std::memcpy(d, in.data() + (std::size_t(yy) * w + xx) * c, sizeof(T) * c);
        } else {
          std::memset(d, 0, sizeof(T) * c);
        }
      }
    }
  }
}

// The input gradient of a stride-1 same-pad 3x3 conv is itself a 3x3 conv of
// the output gradient with tap-reversed, transposed weights.
template <class T>
Mat<T> backward_weights(const ConvLayer<T>& layer) {
  const int c = layer.in_channels, m = layer.out_channels;
  Mat<T> back(c, 9 * m);
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < m; ++j)
      back.col(Eigen::Index(k) * m + j) =
          layer.weight.row(j).segment(Eigen::Index(8 - k) * c, c).transpose();
  return back;
}

// ---------------------------------------------------------------------------
// Winograd F(2x2, 3x3): the fast path for stride-1 pad-1 3x3 convs on
// even-sized maps. Tiles are 2x2 outputs fed by overlapping 4x4 inputs;
// per-tile transforms use the standard 0/±1/±1/2 schedules, and the channel
// contraction becomes 16 GEMMs. The im2col path below stays as the fallback
// for odd maps.
// ---------------------------------------------------------------------------

constexpr int kWinoSlice = 2048;  // tiles per slice

// V(pos*C + c, t) = (B^T d B)[pos] for the 4x4 patch of tile t.
template <class T>
void wino_input_transform(const Mat<T>& in, int h, int w, int t0, int ts, Mat<T>& v, int out0,
                          Mat<T>& scratch, const Vec<T>& zeros) {
  const int c = int(in.rows());
  const std::size_t stride = std::size_t(v.cols() / 16) * c;  // position block pitch
  const int tw = w / 2;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* d[4][4];
    for (int iy = 0; iy < 4; ++iy) {
      const int y = 2 * ty - 1 + iy;
      for (int ix = 0; ix < 4; ++ix) {
        const int x = 2 * tx - 1 + ix;
        d[iy][ix] = (y >= 0 && y < h && x >= 0 && x < w)
                        ? in.data() + (std::size_t(y) * w + x) * c
                        : zeros.data();
      }
    }
    // rows: s = B^T d
    T* s = scratch.data();
    for (int j = 0; j < 4; ++j) {
      T* s0 = s + (0 * 4 + j) * c;
      T* s1 = s + (1 * 4 + j) * c;
      T* s2 = s + (2 * 4 + j) * c;
      T* s3 = s + (3 * 4 + j) * c;
      const T *d0 = d[0][j], *d1 = d[1][j], *d2 = d[2][j], *d3 = d[3][j];
      for (int i = 0; i < c; ++i) {
        s0[i] = d0[i] - d2[i];
        s1[i] = d1[i] + d2[i];
        s2[i] = d2[i] - d1[i];
        s3[i] = d1[i] - d3[i];
      }
    }
    // cols: V = s B
    T* out = v.data() + std::size_t(out0 + t) * c;
    for (int i = 0; i < 4; ++i) {
      const T* r0 = s + (i * 4 + 0) * c;
      const T* r1 = s + (i * 4 + 1) * c;
      const T* r2 = s + (i * 4 + 2) * c;
      const T* r3 = s + (i * 4 + 3) * c;
      T* v0 = out + (i * 4 + 0) * stride;
      T* v1 = out + (i * 4 + 1) * stride;
      T* v2 = out + (i * 4 + 2) * stride;
      T* v3 = out + (i * 4 + 3) * stride;
      for (int k = 0; k < c; ++k) {
        v0[k] = r0[k] - r2[k];
        v1[k] = r1[k] + r2[k];
        v2[k] = r2[k] - r1[k];
        v3[k] = r1[k] - r3[k];
      }
    }
  }
}

// U[pos] = (G g G^T)[pos] per (out, in) channel pair.
template <class T>
void wino_filter_transform(const ConvLayer<T>& layer, std::vector<Mat<T>>& u) {
  const int m = layer.out_channels, c = layer.in_channels;
  u.assign(16, Mat<T>(m, c));
  for (int om = 0; om < m; ++om) {
    for (int ic = 0; ic < c; ++ic) {
      T g[3][3];
      for (int k = 0; k < 9; ++k) g[k / 3][k % 3] = layer.weight(om, k * c + ic);
      T t[4][3];
      for (int j = 0; j < 3; ++j) {
        t[0][j] = g[0][j];
        t[1][j] = T(0.5) * (g[0][j] + g[1][j] + g[2][j]);
        t[2][j] = T(0.5) * (g[0][j] - g[1][j] + g[2][j]);
        t[3][j] = g[2][j];
      }
      for (int i = 0; i < 4; ++i) {
        u[std::size_t(i * 4 + 0)](om, ic) = t[i][0];
        u[std::size_t(i * 4 + 1)](om, ic) = T(0.5) * (t[i][0] + t[i][1] + t[i][2]);
        u[std::size_t(i * 4 + 2)](om, ic) = T(0.5) * (t[i][0] - t[i][1] + t[i][2]);
        u[std::size_t(i * 4 + 3)](om, ic) = t[i][2];
      }
    }
  }
}

// out tile = A^T mhat A, with bias and activation fused into the final write.
template <class T>
void wino_output_transform(const Mat<T>& mhat, int w, int t0, int ts, int in0, Mat<T>& out,
                           Mat<T>& scratch, const Vec<T>& bias, bool activated) {
  const int m = int(out.rows());
  const T* bp = bias.data();
  const std::size_t stride = std::size_t(mhat.cols() / 16) * m;
  const int tw = w / 2;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* mc = mhat.data() + std::size_t(in0 + t) * m;
    T* s = scratch.data();  // 2x4 m-vectors
    for (int j = 0; j < 4; ++j) {
      const T* m0 = mc + (0 * 4 + j) * stride;
      const T* m1 = mc + (1 * 4 + j) * stride;
      const T* m2 = mc + (2 * 4 + j) * stride;
      const T* m3 = mc + (3 * 4 + j) * stride;
      T* s0 = s + (0 * 4 + j) * m;
      T* s1 = s + (1 * 4 + j) * m;
      for (int k = 0; k < m; ++k) {
        s0[k] = m0[k] + m1[k] + m2[k];
        s1[k] = m1[k] - m2[k] - m3[k];
      }
    }
    for (int i = 0; i < 2; ++i) {
      const T* r0 = s + (i * 4 + 0) * m;
      const T* r1 = s + (i * 4 + 1) * m;
      const T* r2 = s + (i * 4 + 2) * m;
      const T* r3 = s + (i * 4 + 3) * m;
      T* y0 = out.data() + (std::size_t(2 * ty + i) * w + 2 * tx) * m;
      T* y1 = y0 + m;
      if (activated) {
        for (int k = 0; k < m; ++k) {
          const T a = r0[k] + r1[k] + r2[k] + bp[k];
          const T b = r1[k] - r2[k] - r3[k] + bp[k];
          y0[k] = a > T(0) ? a : a * T(kLeakySlope);
          y1[k] = b > T(0) ? b : b * T(kLeakySlope);
        }
      } else {
        for (int k = 0; k < m; ++k) {
          y0[k] = r0[k] + r1[k] + r2[k] + bp[k];
          y1[k] = r1[k] - r2[k] - r3[k] + bp[k];
        }
      }
    }
  }
}

// dmhat tile = A dout A^T (adjoint of the output transform). The leaky-relu
// mask (from the cached post-activation values) and the bias gradient are
// folded into the read.
template <class T>
void wino_output_adjoint(const Mat<T>& dout, const Mat<T>* post, int w, int t0, int ts, int out0,
                         Mat<T>& dmhat, Mat<T>& scratch, Vec<T>* bias_grad) {
  const int m = int(dout.rows());
  const int tw = w / 2;
  T* bg = bias_grad ? bias_grad->data() : nullptr;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    T* s = scratch.data();  // 4x2 m-vectors
    for (int j = 0; j < 2; ++j) {
      const std::size_t p0 = (std::size_t(2 * ty + 0) * w + 2 * tx + j) * m;
      const std::size_t p1 = (std::size_t(2 * ty + 1) * w + 2 * tx + j) * m;
      const T* y0 = dout.data() + p0;
      const T* y1 = dout.data() + p1;
      const T* a0 = post ? post->data() + p0 : nullptr;
      const T* a1 = post ? post->data() + p1 : nullptr;
      T* s0 = s + (0 * 2 + j) * m;
      T* s1 = s + (1 * 2 + j) * m;
      T* s2 = s + (2 * 2 + j) * m;
      T* s3 = s + (3 * 2 + j) * m;
      for (int k = 0; k < m; ++k) {
        const T g0 = post && a0[k] <= T(0) ? y0[k] * T(kLeakySlope) : y0[k];
        const T g1 = post && a1[k] <= T(0) ? y1[k] * T(kLeakySlope) : y1[k];
        if (bg) bg[k] += g0 + g1;
        s0[k] = g0;
        s1[k] = g0 + g1;
        s2[k] = g0 - g1;
        s3[k] = -g1;
      }
    }
    T* out = dmhat.data() + std::size_t(out0 + t) * m;
    const std::size_t stride = std::size_t(dmhat.cols() / 16) * m;
    for (int i = 0; i < 4; ++i) {
      const T* a = s + (i * 2 + 0) * m;
      const T* b = s + (i * 2 + 1) * m;
      T* o0 = out + (i * 4 + 0) * stride;
      T* o1 = out + (i * 4 + 1) * stride;
      T* o2 = out + (i * 4 + 2) * stride;
      T* o3 = out + (i * 4 + 3) * stride;
      for (int k = 0; k < m; ++k) {
        o0[k] = a[k];
        o1[k] = a[k] + b[k];
        o2[k] = a[k] - b[k];
        o3[k] = -b[k];
      }
    }
  }
}

// din patch += B dv B^T (adjoint of the input transform; tiles overlap).
template <class T>
void wino_input_adjoint(const Mat<T>& dv, int h, int w, int t0, int ts, int in0, Mat<T>& din,
                        Mat<T>& scratch) {
  const int c = int(din.rows());
  const std::size_t stride = std::size_t(dv.cols() / 16) * c;
  const int tw = w / 2;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* vc = dv.data() + std::size_t(in0 + t) * c;
    T* s = scratch.data();
    for (int j = 0; j < 4; ++j) {
      const T* v0 = vc + (0 * 4 + j) * stride;
      const T* v1 = vc + (1 * 4 + j) * stride;
      const T* v2 = vc + (2 * 4 + j) * stride;
      const T* v3 = vc + (3 * 4 + j) * stride;
      T* s0 = s + (0 * 4 + j) * c;
      T* s1 = s + (1 * 4 + j) * c;
      T* s2 = s + (2 * 4 + j) * c;
      T* s3 = s + (3 * 4 + j) * c;
      for (int k = 0; k < c; ++k) {
        s0[k] = v0[k];
        s1[k] = v1[k] - v2[k] + v3[k];
        s2[k] = -v0[k] + v1[k] + v2[k];
        s3[k] = -v3[k];
      }
    }
    for (int i = 0; i < 4; ++i) {
      const int y = 2 * ty - 1 + i;
      if (y < 0 || y >= h) continue;
      const T* r0 = s + (i * 4 + 0) * c;
      const T* r1 = s + (i * 4 + 1) * c;
      const T* r2 = s + (i * 4 + 2) * c;
      const T* r3 = s + (i * 4 + 3) * c;
      const T* rows[4] = {r0, r1, r2, r3};
      for (int j = 0; j < 4; ++j) {
        const int x = 2 * tx - 1 + j;
        if (x < 0 || x >= w) continue;
        T* __restrict d = din.data() + (std::size_t(y) * w + x) * c;
        if (j == 0) {
          for (int k = 0; k < c; ++k) d[k] += rows[0][k];
        } else if (j == 1) {
          for (int k = 0; k < c; ++k) d[k] += rows[1][k] - rows[2][k] + rows[3][k];
        } else if (j == 2) {
          for (int k = 0; k < c; ++k) d[k] += -rows[0][k] + rows[1][k] + rows[2][k];
        } else {
          for (int k = 0; k < c; ++k) d[k] += -rows[3][k];
        }
      }
    }
  }
}

// dweight += G^T dU G per channel pair.
template <class T>
void wino_filter_detransform(const std::vector<Mat<T>>& du, ConvLayer<T>& grad) {
  const int m = grad.out_channels, c = grad.in_channels;
  for (int om = 0; om < m; ++om) {
    for (int ic = 0; ic < c; ++ic) {
      T u[4][4];
      for (int p = 0; p < 16; ++p) u[p / 4][p % 4] = du[std::size_t(p)](om, ic);
      T s[3][4];
      for (int j = 0; j < 4; ++j) {
        s[0][j] = u[0][j] + T(0.5) * (u[1][j] + u[2][j]);
        s[1][j] = T(0.5) * (u[1][j] - u[2][j]);
        s[2][j] = T(0.5) * (u[1][j] + u[2][j]) + u[3][j];
      }
      for (int i = 0; i < 3; ++i) {
        grad.weight(om, (3 * i + 0) * c + ic) += s[i][0] + T(0.5) * (s[i][1] + s[i][2]);
        grad.weight(om, (3 * i + 1) * c + ic) += T(0.5) * (s[i][1] - s[i][2]);
        grad.weight(om, (3 * i + 2) * c + ic) += T(0.5) * (s[i][1] + s[i][2]) + s[i][3];
      }
    }
  }
}

template <class T>
void wino_sizes(WinoWorkspace<T>& ws, int c, int m, int tiles) {
  const int ts = std::min(tiles, kWinoSlice);
  if (ws.v.rows() != c || ws.v.cols() != 16 * ts) ws.v.resize(c, 16 * ts);
  if (ws.mhat.rows() != m || ws.mhat.cols() != 16 * ts) ws.mhat.resize(m, 16 * ts);
  const int scratch_rows = std::max(c, m);
  if (ws.scratch.rows() != scratch_rows || ws.scratch.cols() < 16)
    ws.scratch.resize(scratch_rows, 16);
  if (ws.zeros.size() < c) ws.zeros = Vec<T>::Zero(c);
}


// ---------------------------------------------------------------------------
// Winograd F(4x4, 3x3): 4x4 output tiles from 6x6 patches, used when both map
// sides are multiples of 4. Same structure as F(2x2,3x3) with the standard
// 6-point schedules; the channel contraction becomes 36 GEMMs.
// ---------------------------------------------------------------------------

template <class T>
void wino4_input_transform(const Mat<T>& in, int h, int w, int t0, int ts, Mat<T>& v, int out0,
                           Mat<T>& scratch, const Vec<T>& zeros) {
  const int c = int(in.rows());
  const std::size_t stride = std::size_t(v.cols() / 36) * c;
  const int tw = w / 4;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* d[6][6];
    for (int iy = 0; iy < 6; ++iy) {
      const int y = 4 * ty - 1 + iy;
      for (int ix = 0; ix < 6; ++ix) {
        const int x = 4 * tx - 1 + ix;
        d[iy][ix] = (y >= 0 && y < h && x >= 0 && x < w)
                        ? in.data() + (std::size_t(y) * w + x) * c
                        : zeros.data();
      }
    }
    T* s = scratch.data();
    for (int j = 0; j < 6; ++j) {
      T* s0 = s + (0 * 6 + j) * c;
      T* s1 = s + (1 * 6 + j) * c;
      T* s2 = s + (2 * 6 + j) * c;
      T* s3 = s + (3 * 6 + j) * c;
      T* s4 = s + (4 * 6 + j) * c;
      T* s5 = s + (5 * 6 + j) * c;
      const T *d0 = d[0][j], *d1 = d[1][j], *d2 = d[2][j], *d3 = d[3][j], *d4 = d[4][j],
              *d5 = d[5][j];
      for (int k = 0; k < c; ++k) {
        s0[k] = T(4) * d0[k] - T(5) * d2[k] + d4[k];
        s1[k] = T(-4) * d1[k] - T(4) * d2[k] + d3[k] + d4[k];
        s2[k] = T(4) * d1[k] - T(4) * d2[k] - d3[k] + d4[k];
        s3[k] = T(-2) * d1[k] - d2[k] + T(2) * d3[k] + d4[k];
        s4[k] = T(2) * d1[k] - d2[k] - T(2) * d3[k] + d4[k];
        s5[k] = T(4) * d1[k] - T(5) * d3[k] + d5[k];
      }
    }
    T* out = v.data() + std::size_t(out0 + t) * c;
    for (int i = 0; i < 6; ++i) {
      const T* r0 = s + (i * 6 + 0) * c;
      const T* r1 = s + (i * 6 + 1) * c;
      const T* r2 = s + (i * 6 + 2) * c;
      const T* r3 = s + (i * 6 + 3) * c;
      const T* r4 = s + (i * 6 + 4) * c;
      const T* r5 = s + (i * 6 + 5) * c;
      T* v0 = out + (i * 6 + 0) * stride;
      T* v1 = out + (i * 6 + 1) * stride;
      T* v2 = out + (i * 6 + 2) * stride;
      T* v3 = out + (i * 6 + 3) * stride;
      T* v4 = out + (i * 6 + 4) * stride;
      T* v5 = out + (i * 6 + 5) * stride;
      for (int k = 0; k < c; ++k) {
        v0[k] = T(4) * r0[k] - T(5) * r2[k] + r4[k];
        v1[k] = T(-4) * r1[k] - T(4) * r2[k] + r3[k] + r4[k];
        v2[k] = T(4) * r1[k] - T(4) * r2[k] - r3[k] + r4[k];
        v3[k] = T(-2) * r1[k] - r2[k] + T(2) * r3[k] + r4[k];
        v4[k] = T(2) * r1[k] - r2[k] - T(2) * r3[k] + r4[k];
        v5[k] = T(4) * r1[k] - T(5) * r3[k] + r5[k];
      }
    }
  }
}

template <class T>
void wino4_filter_transform(const ConvLayer<T>& layer, std::vector<Mat<T>>& u) {
  const int m = layer.out_channels, c = layer.in_channels;
  u.assign(36, Mat<T>(m, c));
  const T k1_4 = T(1) / T(4), k1_6 = T(1) / T(6), k1_12 = T(1) / T(12), k1_24 = T(1) / T(24);
  for (int om = 0; om < m; ++om) {
    for (int ic = 0; ic < c; ++ic) {
      T g[3][3];
      for (int k = 0; k < 9; ++k) g[k / 3][k % 3] = layer.weight(om, k * c + ic);
      T t[6][3];
      for (int j = 0; j < 3; ++j) {
        t[0][j] = k1_4 * g[0][j];
        t[1][j] = -k1_6 * (g[0][j] + g[1][j] + g[2][j]);
        t[2][j] = k1_6 * (-g[0][j] + g[1][j] - g[2][j]);
        t[3][j] = k1_24 * g[0][j] + k1_12 * g[1][j] + k1_6 * g[2][j];
        t[4][j] = k1_24 * g[0][j] - k1_12 * g[1][j] + k1_6 * g[2][j];
        t[5][j] = g[2][j];
      }
      for (int i = 0; i < 6; ++i) {
        u[std::size_t(i * 6 + 0)](om, ic) = k1_4 * t[i][0];
        u[std::size_t(i * 6 + 1)](om, ic) = -k1_6 * (t[i][0] + t[i][1] + t[i][2]);
        u[std::size_t(i * 6 + 2)](om, ic) = k1_6 * (-t[i][0] + t[i][1] - t[i][2]);
        u[std::size_t(i * 6 + 3)](om, ic) = k1_24 * t[i][0] + k1_12 * t[i][1] + k1_6 * t[i][2];
        u[std::size_t(i * 6 + 4)](om, ic) = k1_24 * t[i][0] - k1_12 * t[i][1] + k1_6 * t[i][2];
        u[std::size_t(i * 6 + 5)](om, ic) = t[i][2];
      }
    }
  }
}

template <class T>
void wino4_output_transform(const Mat<T>& mhat, int w, int t0, int ts, int in0, Mat<T>& out,
                            Mat<T>& scratch, const Vec<T>& bias, bool activated) {
  const int m = int(out.rows());
  const T* bp = bias.data();
  const std::size_t stride = std::size_t(mhat.cols() / 36) * m;
  const int tw = w / 4;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* mc = mhat.data() + std::size_t(in0 + t) * m;
    T* s = scratch.data();  // 4x6 m-vectors
    for (int j = 0; j < 6; ++j) {
      const T* m0 = mc + (0 * 6 + j) * stride;
      const T* m1 = mc + (1 * 6 + j) * stride;
      const T* m2 = mc + (2 * 6 + j) * stride;
      const T* m3 = mc + (3 * 6 + j) * stride;
      const T* m4 = mc + (4 * 6 + j) * stride;
      const T* m5 = mc + (5 * 6 + j) * stride;
      T* s0 = s + (0 * 6 + j) * m;
      T* s1 = s + (1 * 6 + j) * m;
      T* s2 = s + (2 * 6 + j) * m;
      T* s3 = s + (3 * 6 + j) * m;
      for (int k = 0; k < m; ++k) {
        s0[k] = m0[k] + m1[k] + m2[k] + m3[k] + m4[k];
        s1[k] = m1[k] - m2[k] + T(2) * m3[k] - T(2) * m4[k];
        s2[k] = m1[k] + m2[k] + T(4) * m3[k] + T(4) * m4[k];
        s3[k] = m1[k] - m2[k] + T(8) * m3[k] - T(8) * m4[k] + m5[k];
      }
    }
    for (int i = 0; i < 4; ++i) {
      const T* r0 = s + (i * 6 + 0) * m;
      const T* r1 = s + (i * 6 + 1) * m;
      const T* r2 = s + (i * 6 + 2) * m;
      const T* r3 = s + (i * 6 + 3) * m;
      const T* r4 = s + (i * 6 + 4) * m;
      const T* r5 = s + (i * 6 + 5) * m;
      T* y = out.data() + (std::size_t(4 * ty + i) * w + 4 * tx) * m;
      for (int k = 0; k < m; ++k) {
        T y0 = r0[k] + r1[k] + r2[k] + r3[k] + r4[k] + bp[k];
        T y1 = r1[k] - r2[k] + T(2) * r3[k] - T(2) * r4[k] + bp[k];
        T y2 = r1[k] + r2[k] + T(4) * r3[k] + T(4) * r4[k] + bp[k];
        T y3 = r1[k] - r2[k] + T(8) * r3[k] - T(8) * r4[k] + r5[k] + bp[k];
        if (activated) {
          y0 = y0 > T(0) ? y0 : y0 * T(kLeakySlope);
          y1 = y1 > T(0) ? y1 : y1 * T(kLeakySlope);
          y2 = y2 > T(0) ? y2 : y2 * T(kLeakySlope);
          y3 = y3 > T(0) ? y3 : y3 * T(kLeakySlope);
        }
        y[k] = y0;
        y[m + k] = y1;
        y[2 * m + k] = y2;
        y[3 * m + k] = y3;
      }
    }
  }
}

template <class T>
void wino4_output_adjoint(const Mat<T>& dout, const Mat<T>* post, int w, int t0, int ts, int out0,
                          Mat<T>& dmhat, Mat<T>& scratch, Vec<T>* bias_grad) {
  const int m = int(dout.rows());
  const std::size_t stride = std::size_t(dmhat.cols() / 36) * m;
  const int tw = w / 4;
  T* bg = bias_grad ? bias_grad->data() : nullptr;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    T* s = scratch.data();  // 6x4 m-vectors
    for (int j = 0; j < 4; ++j) {
      const std::size_t p0 = (std::size_t(4 * ty + 0) * w + 4 * tx + j) * m;
      const std::size_t p1 = (std::size_t(4 * ty + 1) * w + 4 * tx + j) * m;
      const std::size_t p2 = (std::size_t(4 * ty + 2) * w + 4 * tx + j) * m;
      const std::size_t p3 = (std::size_t(4 * ty + 3) * w + 4 * tx + j) * m;
      const T* y0 = dout.data() + p0;
      const T* y1 = dout.data() + p1;
      const T* y2 = dout.data() + p2;
      const T* y3 = dout.data() + p3;
      const T* a0 = post ? post->data() + p0 : nullptr;
      const T* a1 = post ? post->data() + p1 : nullptr;
      const T* a2 = post ? post->data() + p2 : nullptr;
      const T* a3 = post ? post->data() + p3 : nullptr;
      T* s0 = s + (0 * 4 + j) * m;
      T* s1 = s + (1 * 4 + j) * m;
      T* s2 = s + (2 * 4 + j) * m;
      T* s3 = s + (3 * 4 + j) * m;
      T* s4 = s + (4 * 4 + j) * m;
      T* s5 = s + (5 * 4 + j) * m;
      for (int k = 0; k < m; ++k) {
        const T g0 = post && a0[k] <= T(0) ? y0[k] * T(kLeakySlope) : y0[k];
        const T g1 = post && a1[k] <= T(0) ? y1[k] * T(kLeakySlope) : y1[k];
        const T g2 = post && a2[k] <= T(0) ? y2[k] * T(kLeakySlope) : y2[k];
        const T g3 = post && a3[k] <= T(0) ? y3[k] * T(kLeakySlope) : y3[k];
        if (bg) bg[k] += g0 + g1 + g2 + g3;
        s0[k] = g0;
        s1[k] = g0 + g1 + g2 + g3;
        s2[k] = g0 - g1 + g2 - g3;
        s3[k] = g0 + T(2) * g1 + T(4) * g2 + T(8) * g3;
        s4[k] = g0 - T(2) * g1 + T(4) * g2 - T(8) * g3;
        s5[k] = g3;
      }
    }
    T* out = dmhat.data() + std::size_t(out0 + t) * m;
    for (int i = 0; i < 6; ++i) {
      const T* c0 = s + (i * 4 + 0) * m;
      const T* c1 = s + (i * 4 + 1) * m;
      const T* c2 = s + (i * 4 + 2) * m;
      const T* c3 = s + (i * 4 + 3) * m;
      T* o0 = out + (i * 6 + 0) * stride;
      T* o1 = out + (i * 6 + 1) * stride;
      T* o2 = out + (i * 6 + 2) * stride;
      T* o3 = out + (i * 6 + 3) * stride;
      T* o4 = out + (i * 6 + 4) * stride;
      T* o5 = out + (i * 6 + 5) * stride;
      for (int k = 0; k < m; ++k) {
        o0[k] = c0[k];
        o1[k] = c0[k] + c1[k] + c2[k] + c3[k];
        o2[k] = c0[k] - c1[k] + c2[k] - c3[k];
        o3[k] = c0[k] + T(2) * c1[k] + T(4) * c2[k] + T(8) * c3[k];
        o4[k] = c0[k] - T(2) * c1[k] + T(4) * c2[k] - T(8) * c3[k];
        o5[k] = c3[k];
      }
    }
  }
}

template <class T>
void wino4_input_adjoint(const Mat<T>& dv, int h, int w, int t0, int ts, int in0, Mat<T>& din,
                         Mat<T>& scratch) {
  const int c = int(din.rows());
  const std::size_t stride = std::size_t(dv.cols() / 36) * c;
  const int tw = w / 4;
  for (int t = 0; t < ts; ++t) {
    const int tile = t0 + t;
    const int ty = tile / tw;
    const int tx = tile % tw;
    const T* vc = dv.data() + std::size_t(in0 + t) * c;
    T* s = scratch.data();
    for (int j = 0; j < 6; ++j) {
      const T* v0 = vc + (0 * 6 + j) * stride;
      const T* v1 = vc + (1 * 6 + j) * stride;
      const T* v2 = vc + (2 * 6 + j) * stride;
      const T* v3 = vc + (3 * 6 + j) * stride;
      const T* v4 = vc + (4 * 6 + j) * stride;
      const T* v5 = vc + (5 * 6 + j) * stride;
      T* s0 = s + (0 * 6 + j) * c;
      T* s1 = s + (1 * 6 + j) * c;
      T* s2 = s + (2 * 6 + j) * c;
      T* s3 = s + (3 * 6 + j) * c;
      T* s4 = s + (4 * 6 + j) * c;
      T* s5 = s + (5 * 6 + j) * c;
      for (int k = 0; k < c; ++k) {
        s0[k] = T(4) * v0[k];
        s1[k] = T(-4) * v1[k] + T(4) * v2[k] - T(2) * v3[k] + T(2) * v4[k] + T(4) * v5[k];
        s2[k] = T(-5) * v0[k] - T(4) * v1[k] - T(4) * v2[k] - v3[k] - v4[k];
        s3[k] = v1[k] - v2[k] + T(2) * v3[k] - T(2) * v4[k] - T(5) * v5[k];
        s4[k] = v0[k] + v1[k] + v2[k] + v3[k] + v4[k];
        s5[k] = v5[k];
      }
    }
    for (int i = 0; i < 6; ++i) {
      const int y = 4 * ty - 1 + i;
      if (y < 0 || y >= h) continue;
      const T* r0 = s + (i * 6 + 0) * c;
      const T* r1 = s + (i * 6 + 1) * c;
      const T* r2 = s + (i * 6 + 2) * c;
      const T* r3 = s + (i * 6 + 3) * c;
      const T* r4 = s + (i * 6 + 4) * c;
      const T* r5 = s + (i * 6 + 5) * c;
      for (int j = 0; j < 6; ++j) {
        const int x = 4 * tx - 1 + j;
        if (x < 0 || x >= w) continue;
        T* __restrict d = din.data() + (std::size_t(y) * w + x) * c;
        switch (j) {
          case 0:
            for (int k = 0; k < c; ++k) d[k] += T(4) * r0[k];
            break;
          case 1:
            for (int k = 0; k < c; ++k)
              d[k] += T(-4) * r1[k] + T(4) * r2[k] - T(2) * r3[k] + T(2) * r4[k] + T(4) * r5[k];
            break;
          case 2:
            for (int k = 0; k < c; ++k)
              d[k] += T(-5) * r0[k] - T(4) * r1[k] - T(4) * r2[k] - r3[k] - r4[k];
            break;
          case 3:
            for (int k = 0; k < c; ++k)
              d[k] += r1[k] - r2[k] + T(2) * r3[k] - T(2) * r4[k] - T(5) * r5[k];
            break;
          case 4:
            for (int k = 0; k < c; ++k) d[k] += r0[k] + r1[k] + r2[k] + r3[k] + r4[k];
            break;
          default:
            for (int k = 0; k < c; ++k) d[k] += r5[k];
            break;
        }
      }
    }
  }
}

template <class T>
void wino4_filter_detransform(const std::vector<Mat<T>>& du, ConvLayer<T>& grad) {
  const int m = grad.out_channels, c = grad.in_channels;
  const T k1_4 = T(1) / T(4), k1_6 = T(1) / T(6), k1_12 = T(1) / T(12), k1_24 = T(1) / T(24);
  for (int om = 0; om < m; ++om) {
    for (int ic = 0; ic < c; ++ic) {
      T u[6][6];
      for (int p = 0; p < 36; ++p) u[p / 6][p % 6] = du[std::size_t(p)](om, ic);
      T s[3][6];
      for (int j = 0; j < 6; ++j) {
        s[0][j] = k1_4 * u[0][j] - k1_6 * (u[1][j] + u[2][j]) + k1_24 * (u[3][j] + u[4][j]);
        s[1][j] = k1_6 * (-u[1][j] + u[2][j]) + k1_12 * (u[3][j] - u[4][j]);
        s[2][j] = -k1_6 * (u[1][j] + u[2][j]) + k1_6 * (u[3][j] + u[4][j]) + u[5][j];
      }
      for (int i = 0; i < 3; ++i) {
        grad.weight(om, (3 * i + 0) * c + ic) +=
            k1_4 * s[i][0] - k1_6 * (s[i][1] + s[i][2]) + k1_24 * (s[i][3] + s[i][4]);
        grad.weight(om, (3 * i + 1) * c + ic) +=
            k1_6 * (-s[i][1] + s[i][2]) + k1_12 * (s[i][3] - s[i][4]);
        grad.weight(om, (3 * i + 2) * c + ic) +=
            -k1_6 * (s[i][1] + s[i][2]) + k1_6 * (s[i][3] + s[i][4]) + s[i][5];
      }
    }
  }
}

template <class T>
void wino4_sizes(WinoWorkspace<T>& ws, int c, int m, int tiles, int ts) {
  const int width = std::min(tiles, ts);
  if (ws.v.rows() != c || ws.v.cols() != 36 * width) ws.v.resize(c, 36 * width);
  if (ws.mhat.rows() != m || ws.mhat.cols() != 36 * width) ws.mhat.resize(m, 36 * width);
  const int scratch_rows = std::max(c, m);
  if (ws.scratch.rows() != scratch_rows || ws.scratch.cols() < 36)
    ws.scratch.resize(scratch_rows, 36);
  if (ws.zeros.size() < c) ws.zeros = Vec<T>::Zero(c);
}

template <class T>
void apply_leaky(Mat<T>& m) {
  m = m.cwiseMax(m * T(kLeakySlope));
}

// Turns a post-activation gradient into a pre-activation gradient in place.
template <class T>
void leaky_backward(const Mat<T>& post, Mat<T>& grad) {
  grad = (post.array() > T(0)).select(grad, grad * T(kLeakySlope));
}

template <class T>
void conv_forward(const ConvLayer<T>& layer, const Mat<T>& in, int h, int w, bool activated,
                  Mat<T>& out, ConvWorkspace<T>& ws) {
  const int n = h * w;
  out.resize(layer.out_channels, n);
  if (layer.ksize == 1) {
    out.noalias() = layer.weight * in;
  } else if (h % 4 == 0 && w % 4 == 0) {
    const int tiles = n / 16;
    const int slice = std::max(1, kWinoSlice / 2);
    const int c = layer.in_channels, m = layer.out_channels;
    wino4_sizes(ws.wino, c, m, tiles, slice);
    const int vb = int(ws.wino.v.cols() / 36);
    const int mb = int(ws.wino.mhat.cols() / 36);
    std::vector<Mat<T>> u;
    wino4_filter_transform(layer, u);
    for (int t0 = 0; t0 < tiles; t0 += slice) {
      const int ts = std::min(slice, tiles - t0);
      wino4_input_transform(in, h, w, t0, ts, ws.wino.v, 0, ws.wino.scratch, ws.wino.zeros);
      for (int p = 0; p < 36; ++p)
        ws.wino.mhat.middleCols(p * mb, ts).noalias() =
            u[std::size_t(p)] * ws.wino.v.middleCols(p * vb, ts);
      wino4_output_transform(ws.wino.mhat, w, t0, ts, 0, out, ws.wino.scratch, layer.bias,
                             activated);
    }
    return;
  } else if (h % 2 == 0 && w % 2 == 0) {
    const int tiles = n / 4;
    const int c = layer.in_channels, m = layer.out_channels;
    wino_sizes(ws.wino, c, m, tiles);
    Mat<T>& v = ws.wino.v;
    const int vb = int(v.cols() / 16);
    const int mb = int(ws.wino.mhat.cols() / 16);
    std::vector<Mat<T>> u;
    wino_filter_transform(layer, u);
    for (int t0 = 0; t0 < tiles; t0 += kWinoSlice) {
      const int ts = std::min(kWinoSlice, tiles - t0);
      wino_input_transform(in, h, w, t0, ts, v, 0, ws.wino.scratch, ws.wino.zeros);
      for (int p = 0; p < 16; ++p)
        ws.wino.mhat.middleCols(p * mb, ts).noalias() =
            u[std::size_t(p)] * v.middleCols(p * vb, ts);
      wino_output_transform(ws.wino.mhat, w, t0, ts, 0, out, ws.wino.scratch, layer.bias,
                            activated);
    }
    return;
  } else {
    const int rows = layer.in_channels * 9;
    if (ws.col.rows() != rows || ws.col.cols() < std::min(n, kGemmSlice))
      ws.col.resize(rows, std::min(n, kGemmSlice));
    for (int n0 = 0; n0 < n; n0 += kGemmSlice) {
      const int s = std::min(kGemmSlice, n - n0);
      build_im2col(in, h, w, n0, s, ws.col);
      out.middleCols(n0, s).noalias() = layer.weight * ws.col.leftCols(s);
    }
  }
  out.colwise() += layer.bias;
  if (activated) apply_leaky(out);
}

// dout is consumed (converted to the pre-activation gradient in place).
template <class T>
void conv_backward(const ConvLayer<T>& layer, const Mat<T>& in, int h, int w, bool activated,
                   const Mat<T>& out, Mat<T>& dout, ConvLayer<T>& grad, Mat<T>* din,
                   ConvWorkspace<T>& ws) {
  const int n = h * w;
  if (layer.ksize == 1) {
    if (activated) leaky_backward(out, dout);
    grad.bias.noalias() += dout.rowwise().sum();
    grad.weight.noalias() += dout * in.transpose();
    if (din) din->noalias() = layer.weight.transpose() * dout;
    return;
  }
  if (h % 4 == 0 && w % 4 == 0) {
    const int tiles = n / 16;
    const int slice = std::max(1, kWinoSlice / 2);
    const int c = layer.in_channels, m = layer.out_channels;
    wino4_sizes(ws.wino, c, m, tiles, slice);
    const int wts = std::min(tiles, slice);
    if (ws.dcol.rows() != c || ws.dcol.cols() < 36 * wts) ws.dcol.resize(c, 36 * wts);
    std::vector<Mat<T>> u, du;
    wino4_filter_transform(layer, u);
    du.assign(36, Mat<T>::Zero(m, c));
    if (din) {
      din->resize(c, n);
      din->setZero();
    }
    const int vb = int(ws.wino.v.cols() / 36);
    const int mb = int(ws.wino.mhat.cols() / 36);
    const int db = int(ws.dcol.cols() / 36);
    for (int t0 = 0; t0 < tiles; t0 += slice) {
      const int ts = std::min(slice, tiles - t0);
      wino4_input_transform(in, h, w, t0, ts, ws.wino.v, 0, ws.wino.scratch, ws.wino.zeros);
      wino4_output_adjoint(dout, activated ? &out : nullptr, w, t0, ts, 0, ws.wino.mhat,
                           ws.wino.scratch, &grad.bias);
      for (int p = 0; p < 36; ++p)
        du[std::size_t(p)].noalias() += ws.wino.mhat.middleCols(p * mb, ts) *
                                        ws.wino.v.middleCols(p * vb, ts).transpose();
      if (din) {
        for (int p = 0; p < 36; ++p)
          ws.dcol.middleCols(p * db, ts).noalias() =
              u[std::size_t(p)].transpose() * ws.wino.mhat.middleCols(p * mb, ts);
        wino4_input_adjoint(ws.dcol, h, w, t0, ts, 0, *din, ws.wino.scratch);
      }
    }
    wino4_filter_detransform(du, grad);
    return;
  }
  if (h % 2 == 0 && w % 2 == 0) {
    const int tiles = n / 4;
    const int c = layer.in_channels, m = layer.out_channels;
    wino_sizes(ws.wino, c, m, tiles);
    const int wts = std::min(tiles, kWinoSlice);
    if (ws.dcol.rows() != c || ws.dcol.cols() < 16 * wts)
      ws.dcol.resize(c, 16 * wts);  // holds dV here
    std::vector<Mat<T>> u, du;
    wino_filter_transform(layer, u);
    du.assign(16, Mat<T>::Zero(m, c));
    if (din) {
      din->resize(c, n);
      din->setZero();
    }
    const int vb = int(ws.wino.v.cols() / 16);
    const int mb = int(ws.wino.mhat.cols() / 16);
    const int db = int(ws.dcol.cols() / 16);
    for (int t0 = 0; t0 < tiles; t0 += kWinoSlice) {
      const int ts = std::min(kWinoSlice, tiles - t0);
      wino_input_transform(in, h, w, t0, ts, ws.wino.v, 0, ws.wino.scratch, ws.wino.zeros);
      wino_output_adjoint(dout, activated ? &out : nullptr, w, t0, ts, 0, ws.wino.mhat,
                          ws.wino.scratch, &grad.bias);
      for (int p = 0; p < 16; ++p)
        du[std::size_t(p)].noalias() += ws.wino.mhat.middleCols(p * mb, ts) *
                                        ws.wino.v.middleCols(p * vb, ts).transpose();
      if (din) {
        for (int p = 0; p < 16; ++p)
          ws.dcol.middleCols(p * db, ts).noalias() =
              u[std::size_t(p)].transpose() * ws.wino.mhat.middleCols(p * mb, ts);
        wino_input_adjoint(ws.dcol, h, w, t0, ts, 0, *din, ws.wino.scratch);
      }
    }
    wino_filter_detransform(du, grad);
    return;
  }

  if (activated) leaky_backward(out, dout);
  grad.bias.noalias() += dout.rowwise().sum();
  const int slice = std::min(n, kGemmSlice);
  const int rows = layer.in_channels * 9;
  if (ws.col.rows() != rows || ws.col.cols() < slice) ws.col.resize(rows, slice);
  Mat<T> back;
  if (din) {
    din->resize(layer.in_channels, n);
    back = backward_weights(layer);
    if (ws.dcol.rows() != 9 * layer.out_channels || ws.dcol.cols() < slice)
      ws.dcol.resize(9 * layer.out_channels, slice);
  }
  for (int n0 = 0; n0 < n; n0 += slice) {
    const int s = std::min(slice, n - n0);
    build_im2col(in, h, w, n0, s, ws.col);
    grad.weight.noalias() += dout.middleCols(n0, s) * ws.col.leftCols(s).transpose();
    if (din) {
      build_im2col(dout, h, w, n0, s, ws.dcol);
      din->middleCols(n0, s).noalias() = back * ws.dcol.leftCols(s);
    }
  }
}

template <class T>
void maxpool_forward(const Mat<T>& in, int h, int w, Mat<T>& out,
                     std::vector<std::uint8_t>& argmax) {
  const int c = int(in.rows());
  const int oh = h / 2, ow = w / 2;
  out.resize(c, std::size_t(oh) * ow);
  argmax.assign(std::size_t(c) * oh * ow, 0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const std::size_t q = std::size_t(oy) * ow + ox;
      const T* cand[4] = {
          in.data() + (std::size_t(2 * oy) * w + 2 * ox) * c,
          in.data() + (std::size_t(2 * oy) * w + 2 * ox + 1) * c,
          in.data() + (std::size_t(2 * oy + 1) * w + 2 * ox) * c,
          in.data() + (std::size_t(2 * oy + 1) * w + 2 * ox + 1) * c,
      };
      T* o = out.data() + q * c;
      std::uint8_t* am = argmax.data() + q * c;
      for (int i = 0; i < c; ++i) {
        T best = cand[0][i];
        std::uint8_t bk = 0;
        for (std::uint8_t k = 1; k < 4; ++k) {
          if (cand[k][i] > best) {
            best = cand[k][i];
            bk = k;
          }
        }
        o[i] = best;
        am[i] = bk;
      }
    }
  }
}

template <class T>
void maxpool_backward(const Mat<T>& dout, int oh, int ow, const std::vector<std::uint8_t>& argmax,
                      Mat<T>& din, int c, int h, int w) {
  din.resize(c, std::size_t(h) * w);
  din.setZero();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const std::size_t q = std::size_t(oy) * ow + ox;
      const T* g = dout.data() + q * c;
      const std::uint8_t* am = argmax.data() + q * c;
      for (int i = 0; i < c; ++i) {
        const int k = am[i];
        const int yy = 2 * oy + (k >> 1);
        const int xx = 2 * ox + (k & 1);
        din.data()[(std::size_t(yy) * w + xx) * c + i] += g[i];
      }
    }
  }
}

}  // namespace

template <class T>
ForwardResult<T> forward(const Network<T>& net, const Plane<T>& img, ForwardCache<T>* cache) {
  check_shape(net.shape);
  if (img.height <= 0 || img.width <= 0 || img.height % kCellSize != 0 ||
      img.width % kCellSize != 0)
    raise_runtime("forward: image dimensions " + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + " must be positive multiples of " +
                  std::to_string(kCellSize) + "; crop or pad the input first");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  if (c.stages.capacity() < net.backbone.size() + 3) c.stages.reserve(net.backbone.size() + 3);
  c.height = img.height;
  c.width = img.width;
  c.input.resize(1, Eigen::Index(img.size()));
  for (std::size_t i = 0; i < img.size(); ++i) c.input(0, Eigen::Index(i)) = img.v[i];

  const Mat<T>* cur = &c.input;
  int h = img.height, w = img.width;
  std::vector<typename ForwardCache<T>::Stage> old_stages;
  old_stages.swap(c.stages);  // keep buffers for reuse, fix indices below
  std::size_t next_old = 0;
  auto recycle = [&]() {
    typename ForwardCache<T>::Stage stage;
    if (next_old < old_stages.size()) stage = std::move(old_stages[next_old++]);
    stage.is_pool = false;
    stage.conv_index = -1;
    return stage;
  };
  for (std::size_t li = 0; li < net.backbone.size(); ++li) {
    auto stage = recycle();
    stage.conv_index = int(li);
    conv_forward(net.backbone[li], *cur, h, w, true, stage.out, c.ws);
    stage.height = h;
    stage.width = w;
    c.stages.push_back(std::move(stage));
    cur = &c.stages.back().out;
    const int pools = int(std::count(net.shape.pool_after.begin(), net.shape.pool_after.end(),
                                     int(li)));
    for (int p = 0; p < pools; ++p) {
      auto pool = recycle();
      pool.is_pool = true;
      maxpool_forward(*cur, h, w, pool.out, pool.argmax);
      h /= 2;
      w /= 2;
      pool.height = h;
      pool.width = w;
      c.stages.push_back(std::move(pool));
      cur = &c.stages.back().out;
    }
  }

  ForwardResult<T> res;
  res.cells_h = h;
  res.cells_w = w;
  conv_forward(net.det_a, *cur, h, w, true, c.det_hidden, c.ws);
  conv_forward(net.det_b, c.det_hidden, h, w, false, res.logits, c.ws);
  conv_forward(net.desc_a, *cur, h, w, true, c.desc_hidden, c.ws);
  conv_forward(net.desc_b, c.desc_hidden, h, w, false, res.descriptors, c.ws);
  return res;
}

template <class T>
void backward(const Network<T>& net, ForwardCache<T>& cache, Mat<T> dlogits, Mat<T> ddesc,
              Network<T>& grads) {
  const Mat<T>& trunk = cache.stages.back().out;
  const int h = cache.stages.back().height;
  const int w = cache.stages.back().width;

  Mat<T> dtrunk = Mat<T>::Zero(trunk.rows(), trunk.cols());
  Mat<T> dhidden, dpart;

  conv_backward(net.det_b, cache.det_hidden, h, w, false, Mat<T>(), dlogits, grads.det_b, &dhidden,
                cache.ws);
  conv_backward(net.det_a, trunk, h, w, true, cache.det_hidden, dhidden, grads.det_a, &dpart,
                cache.ws);
  dtrunk += dpart;
  conv_backward(net.desc_b, cache.desc_hidden, h, w, false, Mat<T>(), ddesc, grads.desc_b,
                &dhidden, cache.ws);
  conv_backward(net.desc_a, trunk, h, w, true, cache.desc_hidden, dhidden, grads.desc_a, &dpart,
                cache.ws);
  dtrunk += dpart;

  Mat<T> dcur = std::move(dtrunk);
  for (int si = int(cache.stages.size()) - 1; si >= 0; --si) {
    auto& stage = cache.stages[si];
    // Input to this stage: previous stage output, or the image.
    const bool first = si == 0;
    const Mat<T>& in = first ? cache.input : cache.stages[si - 1].out;
    const int in_h = first ? cache.height : cache.stages[si - 1].height;
    const int in_w = first ? cache.width : cache.stages[si - 1].width;
    Mat<T> dnext;
    if (stage.is_pool) {
      maxpool_backward(dcur, stage.height, stage.width, stage.argmax, dnext, int(in.rows()), in_h,
                       in_w);
    } else {
      const auto& layer = net.backbone[stage.conv_index];
      conv_backward(layer, in, in_h, in_w, true, stage.out, dcur,
                    grads.backbone[stage.conv_index], first ? nullptr : &dnext, cache.ws);
    }
    dcur = std::move(dnext);
  }
}

template <class T>
Plane<T> heatmap_from_logits(const Mat<T>& logits, int cells_h, int cells_w) {
  if (logits.rows() != kDetectorChannels || logits.cols() != Eigen::Index(cells_h) * cells_w)
    raise_runtime("heatmap_from_logits: logits shape mismatch");
  Plane<T> hm(cells_h * kCellSize, cells_w * kCellSize);
  Eigen::Array<T, kDetectorChannels, 1> e;
  for (int ci = 0; ci < cells_h; ++ci) {
    for (int cj = 0; cj < cells_w; ++cj) {
      const auto col = logits.col(Eigen::Index(ci) * cells_w + cj);
      const T m = col.maxCoeff();
      e = (col.array() - m).exp();
      const T inv_sum = T(1) / e.sum();
      for (int c = 0; c < kDetectorChannels; ++c)
        hm.at(ci * kCellSize + c / kCellSize, cj * kCellSize + c % kCellSize) = e[c] * inv_sum;
    }
  }
  return hm;
}

template <class T>
Mat<T> heatmap_grad_to_logits(const Plane<T>& heatmap, const Plane<T>& dheatmap) {
  if (heatmap.height != dheatmap.height || heatmap.width != dheatmap.width ||
      heatmap.height % kCellSize != 0 || heatmap.width % kCellSize != 0)
    raise_runtime("heatmap_grad_to_logits: shape mismatch");
  const int cells_h = heatmap.height / kCellSize;
  const int cells_w = heatmap.width / kCellSize;
  Mat<T> dlogits(kDetectorChannels, Eigen::Index(cells_h) * cells_w);
  Eigen::Array<T, kDetectorChannels, 1> s, g;
  for (int ci = 0; ci < cells_h; ++ci) {
    for (int cj = 0; cj < cells_w; ++cj) {
      for (int c = 0; c < kDetectorChannels; ++c) {
        const int y = ci * kCellSize + c / kCellSize;
        const int x = cj * kCellSize + c % kCellSize;
        s[c] = heatmap.at(y, x);
        g[c] = dheatmap.at(y, x);
      }
      const T dot = (s * g).sum();
      dlogits.col(Eigen::Index(ci) * cells_w + cj) = (s * (g - dot)).matrix();
    }
  }
  return dlogits;
}

template <class T>
InterpolatedDescriptors<T> interpolate_descriptors(const Mat<T>& field, int cells_h, int cells_w,
                                                   const PointSet& points) {
  if (field.cols() != Eigen::Index(cells_h) * cells_w)
    raise_runtime("interpolate_descriptors: field shape mismatch");
  const int n = int(points.size());
  InterpolatedDescriptors<T> out;
  out.unit.resize(field.rows(), n);
  out.raw.resize(field.rows(), n);
  out.tap_index.resize(n);
  out.tap_weight.resize(n);
  out.raw_norm.resize(n);
  const double offset = (kCellSize - 1) / 2.0;  // receptive-field center of a cell
  for (int i = 0; i < n; ++i) {
    double gx = (points.pts[i].x - offset) / kCellSize;
    double gy = (points.pts[i].y - offset) / kCellSize;
    gx = std::clamp(gx, 0.0, double(cells_w - 1));
    gy = std::clamp(gy, 0.0, double(cells_h - 1));
    const int x0 = int(std::floor(gx));
    const int y0 = int(std::floor(gy));
    const int x1 = x0 + 1 < cells_w ? x0 + 1 : x0;
    const int y1 = y0 + 1 < cells_h ? y0 + 1 : y0;
    const T fx = T(gx - x0);
    const T fy = T(gy - y0);
    out.tap_index[i] = {y0 * cells_w + x0, y0 * cells_w + x1, y1 * cells_w + x0,
                        y1 * cells_w + x1};
    out.tap_weight[i] = {(T(1) - fy) * (T(1) - fx), (T(1) - fy) * fx, fy * (T(1) - fx), fy * fx};
    auto raw = out.raw.col(i);
    raw = out.tap_weight[i][0] * field.col(out.tap_index[i][0]) +
          out.tap_weight[i][1] * field.col(out.tap_index[i][1]) +
          out.tap_weight[i][2] * field.col(out.tap_index[i][2]) +
          out.tap_weight[i][3] * field.col(out.tap_index[i][3]);
    T norm = raw.norm();
    if (norm < T(1e-12)) norm = T(1e-12);
    out.raw_norm[i] = norm;
    out.unit.col(i) = raw / norm;
  }
  return out;
}

template <class T>
void interpolate_descriptors_backward(const InterpolatedDescriptors<T>& cache, const Mat<T>& dunit,
                                      Mat<T>& dfield) {
  const int n = int(cache.tap_index.size());
  Vec<T> draw(cache.unit.rows());
  for (int i = 0; i < n; ++i) {
    const auto u = cache.unit.col(i);
    const auto g = dunit.col(i);
    draw = (g - u * u.dot(g)) / cache.raw_norm[i];
    for (int k = 0; k < 4; ++k)
      dfield.col(cache.tap_index[i][k]) += cache.tap_weight[i][k] * draw;
  }
}

Image center_crop_to_cell_multiple(const Image& img) {
  const int h = (img.height / kCellSize) * kCellSize;
  const int w = (img.width / kCellSize) * kCellSize;
  if (h <= 0 || w <= 0)
    raise_runtime("image smaller than one detector cell; cannot crop");
  if (h == img.height && w == img.width) return img;
  const int y0 = (img.height - h) / 2;
  const int x0 = (img.width - w) / 2;
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

// Explicit instantiations: float for training/inference, double for the
// finite-difference gradient harness.
#define GOODPOINT_INSTANTIATE_MODEL(T)                                                            \
  template Network<T> make_network<T>(const NetworkShape&, std::uint64_t);                        \
  template Network<T> zeros_like<T>(const Network<T>&);                                           \
  template std::vector<std::pair<std::string, ConvLayer<T>*>> layer_refs<T>(Network<T>&);         \
  template std::vector<std::pair<std::string, const ConvLayer<T>*>> layer_refs<T>(               \
      const Network<T>&);                                                                         \
  template long long param_count<T>(const Network<T>&);                                           \
  template ForwardResult<T> forward<T>(const Network<T>&, const Plane<T>&, ForwardCache<T>*);     \
  template void backward<T>(const Network<T>&, ForwardCache<T>&, Mat<T>, Mat<T>, Network<T>&);    \
  template Plane<T> heatmap_from_logits<T>(const Mat<T>&, int, int);                              \
  template Mat<T> heatmap_grad_to_logits<T>(const Plane<T>&, const Plane<T>&);                    \
  template InterpolatedDescriptors<T> interpolate_descriptors<T>(const Mat<T>&, int, int,         \
                                                                 const PointSet&);                \
  template void interpolate_descriptors_backward<T>(const InterpolatedDescriptors<T>&,            \
                                                    const Mat<T>&, Mat<T>&);

GOODPOINT_INSTANTIATE_MODEL(float)
GOODPOINT_INSTANTIATE_MODEL(double)

template Network<float> cast_network<float, double>(const Network<double>&);
template Network<double> cast_network<double, float>(const Network<float>&);
template Network<float> cast_network<float, float>(const Network<float>&);
template Network<double> cast_network<double, double>(const Network<double>&);

}  // namespace goodpoint

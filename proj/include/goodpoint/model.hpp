#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "goodpoint/common.hpp"

namespace goodpoint {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Vector<T, Eigen::Dynamic>;

// Detector cells are 8x8: one softmax-normalized channel per cell pixel.
inline constexpr int kCellSize = 8;
inline constexpr int kDetectorChannels = kCellSize * kCellSize;
inline constexpr double kLeakySlope = 0.01;

// Feature maps are channels x pixels matrices (column p = y * width + x), so
// each pixel's channel vector is contiguous.

struct NetworkShape {
  std::vector<int> backbone_channels;  // output channels of each 3x3 conv
  std::vector<int> pool_after;         // conv indices followed by a 2x2 pool; repeats allowed
  int head_hidden = 256;
  int descriptor_dim = 256;

  // VGG backbone 64,64,64,64,128,128,128,128 with pools after convs 1, 3, 5.
  static NetworkShape standard();
  // Tiny /8 topology for finite-difference gradient tests.
  static NetworkShape reduced();

  bool operator==(const NetworkShape&) const = default;
};

template <class T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int ksize = 0;                  // 1 or 3
  Mat<T> weight;                  // out_channels x (in_channels * ksize * ksize), tap-major columns
  Vec<T> bias;

  long long param_count() const { return weight.size() + bias.size(); }
};

template <class T>
struct Network {
  NetworkShape shape;
  std::vector<ConvLayer<T>> backbone;
  ConvLayer<T> det_a, det_b;    // 3x3 -> hidden (activated), 1x1 -> 64 logits
  ConvLayer<T> desc_a, desc_b;  // 3x3 -> hidden (activated), 1x1 -> descriptor_dim
};

template <class T>
Network<T> make_network(const NetworkShape& shape, std::uint64_t seed);

template <class T>
Network<T> zeros_like(const Network<T>& net);

// Named references to every layer, in a fixed order shared by the optimizer
// and the checkpoint container.
template <class T>
std::vector<std::pair<std::string, ConvLayer<T>*>> layer_refs(Network<T>& net);
template <class T>
std::vector<std::pair<std::string, const ConvLayer<T>*>> layer_refs(const Network<T>& net);

template <class T>
long long param_count(const Network<T>& net);

template <class U, class T>
Network<U> cast_network(const Network<T>& net);

template <class T>
struct WinoWorkspace {
  Mat<T> v;        // transformed input, C x positions * tile slice
  Mat<T> mhat;     // per-position products, M x positions * tile slice
  Mat<T> scratch;  // per-tile stage buffer
  Vec<T> zeros;    // padded-tap source
};

template <class T>
struct ConvWorkspace {
  Mat<T> col;
  Mat<T> dcol;
  WinoWorkspace<T> wino;
};

template <class T>
struct ForwardCache {
  struct Stage {
    bool is_pool = false;
    int conv_index = -1;
    int height = 0, width = 0;        // output dims
    Mat<T> out;                       // post-activation (convs) or pooled values
    std::vector<std::uint8_t> argmax; // pools: winner in {0..3} per (channel, pixel)
  };
  int height = 0, width = 0;
  Mat<T> input;
  std::vector<Stage> stages;
  Mat<T> det_hidden, desc_hidden;
  ConvWorkspace<T> ws;
};

template <class T>
struct ForwardResult {
  Mat<T> logits;       // 64 x cells
  Mat<T> descriptors;  // descriptor_dim x cells (raw semi-dense field)
  int cells_h = 0, cells_w = 0;
};

// Runs the backbone and both heads. Height and width must be divisible by 8.
// Pass a cache to keep what backward() needs.
template <class T>
ForwardResult<T> forward(const Network<T>& net, const Plane<T>& img,
                         ForwardCache<T>* cache = nullptr);

// Accumulates parameter gradients for d(logits) and d(descriptor field).
template <class T>
void backward(const Network<T>& net, ForwardCache<T>& cache, Mat<T> dlogits, Mat<T> ddesc,
              Network<T>& grads);

// Per-cell softmax over the 64 channels, then depth-to-space: channel c of
// cell (i, j) lands on pixel (8j + c % 8, 8i + c / 8).
template <class T>
Plane<T> heatmap_from_logits(const Mat<T>& logits, int cells_h, int cells_w);

// Pulls a heatmap-space gradient back through depth-to-space and the softmax.
// heatmap must be the forward output for the same logits.
template <class T>
Mat<T> heatmap_grad_to_logits(const Plane<T>& heatmap, const Plane<T>& dheatmap);

// Interpolated, L2-normalized descriptors (one column per point) plus the tap
// cache used for back-propagation into the semi-dense field.
template <class T>
struct InterpolatedDescriptors {
  Mat<T> unit;  // descriptor_dim x n, unit columns
  std::vector<std::array<int, 4>> tap_index;
  std::vector<std::array<T, 4>> tap_weight;
  std::vector<T> raw_norm;
  Mat<T> raw;  // pre-normalization samples
};

// Pixel coordinates map to grid coordinates ((x - 3.5) / 8, (y - 3.5) / 8),
// clamped to the semi-dense grid.
template <class T>
InterpolatedDescriptors<T> interpolate_descriptors(const Mat<T>& field, int cells_h, int cells_w,
                                                   const PointSet& points);

template <class T>
void interpolate_descriptors_backward(const InterpolatedDescriptors<T>& cache, const Mat<T>& dunit,
                                      Mat<T>& dfield);

// Largest centered crop whose sides are multiples of the cell size.
Image center_crop_to_cell_multiple(const Image& img);

}  // namespace goodpoint

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace goodpoint {

// Error kinds map onto process exit codes (0 ok, 1 runtime, 2 usage).
enum class ErrorKind { runtime = 1, usage = 2 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise_runtime(const std::string& msg) {
  throw Error(ErrorKind::runtime, msg);
}
[[noreturn]] inline void raise_usage(const std::string& msg) {
  throw Error(ErrorKind::usage, msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) raise_runtime(msg);
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

// 2-D points in pixel units with optional per-point scores (empty or size()).
struct PointSet {
  std::vector<Vec2> pts;
  std::vector<double> scores;

  std::size_t size() const { return pts.size(); }
  bool empty() const { return pts.empty(); }
  void push_back(Vec2 p) { pts.push_back(p); }
  void push_back(Vec2 p, double score) {
    pts.push_back(p);
    scores.push_back(score);
  }
};

// Row-major 2-D scalar field. Pixel (x, y) is the center of column x, row y.
template <class T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> v;

  Plane() = default;
  Plane(int h, int w, T fill = T(0)) : height(h), width(w), v(std::size_t(h) * std::size_t(w), fill) {}

  T& at(int y, int x) { return v[std::size_t(y) * width + x]; }
  const T& at(int y, int x) const { return v[std::size_t(y) * width + x]; }
  std::size_t size() const { return v.size(); }
};

// Single-channel intensity grid with values in [0, 1].
using Image = Plane<float>;

struct ValidityMask {
  Plane<std::uint8_t> data;
  long long count_nonzero = 0;
};

}  // namespace goodpoint

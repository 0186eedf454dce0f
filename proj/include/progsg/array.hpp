#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace progsg::ad {

// Dense row-major array of reals. Values are held as doubles; a 32-bit
// compute mode is emulated by rounding op results through float (see Tape).
struct Array {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), 0.0);
  }
  Array(std::vector<int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  static Array zeros(std::vector<int64_t> s) { return Array(std::move(s)); }
  static Array full(std::vector<int64_t> s, double v) {
    Array a(std::move(s));
    for (double& x : a.data) x = v;
    return a;
  }
  static Array scalar(double v) { return Array({1}, {v}); }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }
  std::string shape_str() const;

  // Rounds every element through float.
  void round_to_f32();
};

}  // namespace progsg::ad

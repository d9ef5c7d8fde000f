#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgaug {

// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar (size 1).
// Plain value type; gradients and graph bookkeeping live on the Tape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // rows/cols for rank <= 2 (scalar -> 1x1, vector -> 1xN)
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t r, std::size_t c);
    double at2(std::size_t r, std::size_t c) const;

    // value of a size-1 tensor
    double item() const;

    bool all_finite() const;

    std::uint64_t checksum() const;

    // Binary format: rank and dims as 64-bit little-endian unsigned,
    // then row-major 64-bit little-endian floats.
    void write(std::ostream& os) const;
    static Tensor read(std::istream& is);
    void save(const std::string& path) const;
    static Tensor load(const std::string& path);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace cgaug

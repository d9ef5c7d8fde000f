#include "cgaug/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cgaug/common.hpp"

namespace cgaug {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() == 0) return 1;
    if (rank() == 1) return 1;
    if (rank() == 2) return shape_[0];
    throw ShapeError("rows(): rank > 2 tensor " + shape_str(shape_));
}

std::size_t Tensor::cols() const {
    if (rank() == 0) return 1;
    if (rank() == 1) return shape_[0];
    if (rank() == 2) return shape_[1];
    throw ShapeError("cols(): rank > 2 tensor " + shape_str(shape_));
}

double& Tensor::at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
double Tensor::at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::uint64_t Tensor::checksum() const {
    std::uint64_t h = fnv1a64(shape_.data(), shape_.size() * sizeof(std::size_t));
    return fnv1a64(data_.data(), data_.size() * sizeof(double), h);
}

void Tensor::write(std::ostream& os) const {
    std::uint64_t rank64 = rank();
    os.write(reinterpret_cast<const char*>(&rank64), 8);
    for (std::size_t d : shape_) {
        std::uint64_t d64 = d;
        os.write(reinterpret_cast<const char*>(&d64), 8);
    }
    os.write(reinterpret_cast<const char*>(data_.data()),
             static_cast<std::streamsize>(data_.size() * sizeof(double)));
    if (!os) throw std::runtime_error("tensor write failed");
}

Tensor Tensor::read(std::istream& is) {
    std::uint64_t rank64 = 0;
    is.read(reinterpret_cast<char*>(&rank64), 8);
    if (!is) throw ParseError("tensor read: truncated header");
    if (rank64 > 8) throw ParseError("tensor read: implausible rank " + std::to_string(rank64));
    std::vector<std::size_t> shape(rank64);
    for (auto& d : shape) {
        std::uint64_t d64 = 0;
        is.read(reinterpret_cast<char*>(&d64), 8);
        if (!is) throw ParseError("tensor read: truncated dims");
        d = static_cast<std::size_t>(d64);
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data_.data()),
            static_cast<std::streamsize>(t.data_.size() * sizeof(double)));
    if (!is) throw ParseError("tensor read: truncated data");
    return t;
}

void Tensor::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write(f);
}

Tensor Tensor::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    return read(f);
}

}  // namespace cgaug

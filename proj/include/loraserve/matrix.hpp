#pragma once

#include <cstddef>
#include <vector>

#include "loraserve/errors.hpp"

namespace loraserve {

// Dense row-major matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0);

    double & at(int r, int c) { return data[size_t(r) * size_t(cols) + size_t(c)]; }
    double at(int r, int c) const { return data[size_t(r) * size_t(cols) + size_t(c)]; }

    bool operator==(const Matrix &) const = default;
};

Matrix identity(int n);

// Standard product. The inner dimension must match and be nonzero.
Matrix matmul(const Matrix & a, const Matrix & b);

// m * x with x as a column vector of length m.cols
std::vector<double> matvec(const Matrix & m, const std::vector<double> & x);

// m^T * x with x of length m.rows
std::vector<double> transposed_matvec(const Matrix & m, const std::vector<double> & x);

bool all_finite(const Matrix & m);

std::vector<double> column(const Matrix & m, int c);
void set_column(Matrix & m, int c, const std::vector<double> & v);
Matrix from_columns(const std::vector<std::vector<double>> & cols);

}  // namespace loraserve

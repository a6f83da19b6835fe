#include "loraserve/matrix.hpp"

#include <cmath>
#include <string>

namespace loraserve {

Matrix::Matrix(int rows_, int cols_, double fill) : rows(rows_), cols(cols_) {
    if (rows < 0 || cols < 0) {
        throw ShapeError("matrix dims must be non-negative, got " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
    data.assign(size_t(rows) * size_t(cols), fill);
}

Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols != b.rows || a.cols == 0) {
        throw ShapeError("matmul shape mismatch: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double * arow = &a.data[size_t(i) * size_t(a.cols)];
        double *       orow = &out.data[size_t(i) * size_t(out.cols)];
        for (int k = 0; k < a.cols; ++k) {
            const double   aik  = arow[k];
            const double * brow = &b.data[size_t(k) * size_t(b.cols)];
            for (int j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

std::vector<double> matvec(const Matrix & m, const std::vector<double> & x) {
    if (int(x.size()) != m.cols || m.cols == 0) {
        throw ShapeError("matvec shape mismatch");
    }
    std::vector<double> out(size_t(m.rows), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double * row = &m.data[size_t(i) * size_t(m.cols)];
        double         acc = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            acc += row[j] * x[size_t(j)];
        }
        out[size_t(i)] = acc;
    }
    return out;
}

std::vector<double> transposed_matvec(const Matrix & m, const std::vector<double> & x) {
    if (int(x.size()) != m.rows || m.rows == 0) {
        throw ShapeError("transposed_matvec shape mismatch");
    }
    std::vector<double> out(size_t(m.cols), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double * row = &m.data[size_t(i) * size_t(m.cols)];
        const double   xi  = x[size_t(i)];
        for (int j = 0; j < m.cols; ++j) {
            out[size_t(j)] += row[j] * xi;
        }
    }
    return out;
}

bool all_finite(const Matrix & m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::vector<double> column(const Matrix & m, int c) {
    std::vector<double> out(size_t(m.rows));
    for (int i = 0; i < m.rows; ++i) {
        out[size_t(i)] = m.at(i, c);
    }
    return out;
}

void set_column(Matrix & m, int c, const std::vector<double> & v) {
    if (int(v.size()) != m.rows) {
        throw ShapeError("set_column length mismatch");
    }
    for (int i = 0; i < m.rows; ++i) {
        m.at(i, c) = v[size_t(i)];
    }
}

Matrix from_columns(const std::vector<std::vector<double>> & cols) {
    if (cols.empty()) {
        return {};
    }
    Matrix m(int(cols[0].size()), int(cols.size()));
    for (int c = 0; c < m.cols; ++c) {
        set_column(m, c, cols[size_t(c)]);
    }
    return m;
}

}  // namespace loraserve

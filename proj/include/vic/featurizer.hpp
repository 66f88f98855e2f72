#pragma once

// Token features: sinusoidal 2-D position embedding concatenated with the
// appearance descriptor, then a learned linear projection to model width.

#include "vic/core.hpp"
#include "vic/dataset.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace vic {

struct TokenFeatures {
    Matrix features;  ///< N_t x d
    int frame_index = 0;

    Eigen::Index rows() const { return features.rows(); }
};

// d_pe/4 bands per axis with frequencies geometric in [1, 100] cycles per
// unit. Layout: [sin x | cos x | sin y | cos y], each block ordered by band.
// Every (sin, cos) pair has unit norm, so ||pe|| = sqrt(d_pe / 2).
inline Vector position_embedding(double x, double y, int d_pe) {
    if (d_pe <= 0 || d_pe % 4 != 0)
        throw ConfigError("position embedding width d_pe=" + std::to_string(d_pe) + " must be a positive multiple of 4");
    const int bands = d_pe / 4;
    Vector pe(d_pe);
    for (int b = 0; b < bands; ++b) {
        const double freq = bands == 1 ? 1.0 : std::pow(100.0, static_cast<double>(b) / (bands - 1));
        const double wx = 2.0 * std::numbers::pi * freq * x;
        const double wy = 2.0 * std::numbers::pi * freq * y;
        pe[b] = std::sin(wx);
        pe[bands + b] = std::cos(wx);
        pe[2 * bands + b] = std::sin(wy);
        pe[3 * bands + b] = std::cos(wy);
    }
    return pe;
}

struct FeaturizerParams {
    int d_in = 32;
    int d_pe = 16;
    Matrix weight;  ///< d x (d_in + d_pe)
    Matrix bias;    ///< 1 x d

    int d_model() const { return static_cast<int>(weight.rows()); }

    static FeaturizerParams zeros(int d_in, int d_pe, int d) {
        FeaturizerParams p;
        p.d_in = d_in;
        p.d_pe = d_pe;
        p.weight = Matrix::Zero(d, d_in + d_pe);
        p.bias = Matrix::Zero(1, d);
        return p;
    }

    template <class F>
    void visit(F&& f) {
        f("featurizer.weight", "backbone", weight);
        f("featurizer.bias", "backbone", bias);
    }
    template <class F>
    void visit(F&& f) const {
        f("featurizer.weight", "backbone", weight);
        f("featurizer.bias", "backbone", bias);
    }
};

// Row i = [descriptor_i | pe_i], before projection.
inline Matrix frame_inputs(const Frame& frame, int d_in, int d_pe) {
    Matrix x(static_cast<Eigen::Index>(frame.size()), d_in + d_pe);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& o = frame.observations[i];
        if (!o.has_descriptor())
            throw ValidationError("frame " + std::to_string(frame.index) +
                                  " has no descriptors; generate data with the simulator or supply \"f\" arrays");
        if (o.descriptor.size() != d_in)
            throw ValidationError("descriptor length " + std::to_string(o.descriptor.size()) + " != d_in " +
                                  std::to_string(d_in));
        const auto r = static_cast<Eigen::Index>(i);
        x.row(r).head(d_in) = o.descriptor.transpose();
        x.row(r).tail(d_pe) = position_embedding(o.x, o.y, d_pe).transpose();
    }
    return x;
}

// Raw appearance descriptors stacked as rows; empty frames give a 0 x d matrix.
inline Matrix frame_descriptors(const Frame& frame, int d_in) {
    Matrix x(static_cast<Eigen::Index>(frame.size()), d_in);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& o = frame.observations[i];
        if (o.descriptor.size() != d_in)
            throw ValidationError("frame " + std::to_string(frame.index) + " lacks descriptors of length " +
                                  std::to_string(d_in));
        x.row(static_cast<Eigen::Index>(i)) = o.descriptor.transpose();
    }
    return x;
}

inline Matrix project_inputs(const Matrix& inputs, const FeaturizerParams& p) {
    Matrix out = inputs * p.weight.transpose();
    out.rowwise() += p.bias.row(0);
    return out;
}

inline TokenFeatures embed_frame(const Frame& frame, const FeaturizerParams& p) {
    return {project_inputs(frame_inputs(frame, p.d_in, p.d_pe), p), frame.index};
}

// Accumulates parameter gradients for out = inputs W^T + b.
inline void project_inputs_backward(const Matrix& inputs, const Matrix& d_out, FeaturizerParams& grad) {
    grad.weight.noalias() += d_out.transpose() * inputs;
    grad.bias += d_out.colwise().sum();
}

}  // namespace vic

#pragma once

// Shared test utilities: finite-difference gradient checking and random
// rotation generation. The gradient checker is the independent oracle for
// every differentiable op: central differences with step h on each input
// element, compared against the recorded backward pass.
#include <cmath>
#include <functional>
#include <vector>

#include "phasekit/geometry.hpp"
#include "phasekit/tensor.hpp"

namespace testutil {

using phasekit::ag::Tape;
using phasekit::ag::Tensor;

inline double rel_gap(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-8) return 0.0;  // both effectively zero
    return std::abs(a - b) / scale;
}

// Max relative error between analytic and central-difference gradients over
// every element of every leaf. `f` must rebuild the scalar loss from the
// leaves on each call. Pointers, not copies: the tape pointer lives on the
// handle, so the checker must mutate the same handles the closure uses.
inline double max_grad_error(const std::vector<Tensor*>& leaves, const std::function<Tensor()>& f,
                             double h = 1e-5) {
    Tape tape;
    for (auto* l : leaves) {
        l->tape = &tape;
        l->set_requires_grad(true);
    }
    Tensor loss = f();
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto* l : leaves) {
        analytic.push_back(l->node->grad.empty() ? std::vector<double>(l->data().size(), 0.0)
                                                 : l->node->grad);
        l->tape = nullptr;
        l->node->grad.clear();
        l->set_requires_grad(false);
    }
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li]->data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = f().item();
            data[i] = saved - h;
            const double down = f().item();
            data[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, rel_gap(fd, analytic[li][i]));
        }
    }
    return worst;
}

inline phasekit::geo::Mat3 random_rotation(phasekit::Rng& rng) {
    const phasekit::geo::Vec3 axis = phasekit::geo::normalize(
        {rng.normal(), rng.normal(), rng.normal()});
    return phasekit::geo::axis_angle_to_matrix(axis, rng.uniform(-3.1, 3.1));
}

inline Tensor leaf(std::vector<double> data, const phasekit::ag::Shape& shape) {
    return Tensor::from(std::move(data), shape);
}

inline Tensor random_leaf(const phasekit::ag::Shape& shape, phasekit::Rng& rng, double stddev = 1.0) {
    return Tensor::randn(shape, rng, stddev);
}

}  // namespace testutil

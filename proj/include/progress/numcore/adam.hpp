#pragma once

#include <cmath>

#include "progress/numcore/dense_net.hpp"

namespace progress::numcore {

/// Adaptive-moment optimizer state with bias correction.
template <typename Scalar>
struct AdamState {
    Vector<Scalar> first_moment;
    Vector<Scalar> second_moment;
    long step_count = 0;
    Scalar learning_rate = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);

    AdamState() = default;
    explicit AdamState(Eigen::Index n, Scalar lr = Scalar(1e-3))
        : first_moment(Vector<Scalar>::Zero(n)), second_moment(Vector<Scalar>::Zero(n)), learning_rate(lr) {}
};

template <typename Scalar>
void optimizer_step(VectorRef<Scalar> params, ConstVectorRef<Scalar> grads,
                    AdamState<Scalar>& state) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw ShapeError("optimizer_step: parameter, gradient and moment lengths differ");
    ++state.step_count;
    state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
    state.second_moment =
        state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step_count));
    const Scalar c2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step_count));
    params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace progress::numcore

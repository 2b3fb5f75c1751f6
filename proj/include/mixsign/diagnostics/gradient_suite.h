#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixsign/tensor/grad_check.h"
#include "mixsign/tensor/ops.h"
#include "mixsign/util/rng.h"

namespace mixsign {

struct GradSuiteRow {
    std::string name;
    int cases = 0;
    int passed = 0;
    double worst_rel_error = 0.0;
    bool ok() const { return cases > 0 && passed == cases; }
};

// A randomly drawn, well-conditioned input set for one op kind: values stay
// away from relu kinks and max ties by more than the finite-difference step.
struct OpCase {
    std::vector<Tensor> inputs;
    OpAttrs attrs;
};
OpCase random_op_case(OpKind kind, Rng& rng);

// Checks apply_op(kind) against central differences on `cases` random cases.
GradSuiteRow check_op_kind(OpKind kind, int cases, std::uint64_t seed, double eps = 1e-5, double tol = 1e-4);

// Module-level rows (graph updates, head, decoder, CTC) plus one row per op
// kind. Shapes are tiny so the whole suite runs in seconds.
std::vector<GradSuiteRow> run_gradient_suite(std::uint64_t seed = 7, int cases_per_op = 10);

}  // namespace mixsign

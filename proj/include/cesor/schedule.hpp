#pragma once

namespace cesor {

struct RiskSchedule {
    double alpha = 0.05;     // target risk level
    double rho = 0.8;        // fraction of training spent in the linear phase
    int total_steps = 1;     // M

    void validate() const;
};

// alpha' = max(alpha, 1 - (1 - alpha) * m / (rho * M)) for 1 <= m <= M.
double soft_risk_level(int m, const RiskSchedule& schedule);

}  // namespace cesor

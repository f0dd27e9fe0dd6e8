#include "cesor/schedule.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace cesor {

void RiskSchedule::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("schedule alpha must lie in (0, 1)");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("schedule rho must lie in (0, 1]");
    if (total_steps < 1) throw std::invalid_argument("schedule needs at least one step");
}

double soft_risk_level(int m, const RiskSchedule& schedule) {
    schedule.validate();
    if (m < 1 || m > schedule.total_steps)
        throw std::out_of_range("step " + std::to_string(m) + " outside [1, " +
                                std::to_string(schedule.total_steps) + "]");
    const double progress = static_cast<double>(m) / (schedule.rho * schedule.total_steps);
    if (progress >= 1.0 - 1e-12) return schedule.alpha;
    return std::max(schedule.alpha, 1.0 - (1.0 - schedule.alpha) * progress);
}

}  // namespace cesor

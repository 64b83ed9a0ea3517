#include "sotmle/simulation.hpp"

namespace sotmle {

// Output of `sotmle oracle --dgp all` (M = 10^7); kept in sync with data/oracle_constants.txt.
const std::vector<OracleConstants>& frozen_oracle_constants() {
    static const std::vector<OracleConstants> constants{
        {"d1", 10000000, 20160101, {0.3555304170701738, 0.00013150131326536475}, {0.25041362974066528, 0.00021981697900927649}},
        {"d3", 10000000, 20160101, {0.05995138860011423, 4.5506320486651541e-06}, {0.069592442298173962, 0.00010158113267181519}},
    };
    return constants;
}

}  // namespace sotmle

#include "robodet/network.hpp"

namespace robodet {

template struct Network<float>;
template struct Network<double>;

}  // namespace robodet

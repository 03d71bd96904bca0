#pragma once

#include <string>

#include "json.hpp"
#include "rlconn/numerics.hpp"

namespace rlconn {

/// Insertion-ordered JSON so serialized reports are byte-stable.
using Json = nlohmann::ordered_json;

Json matrix_to_json(const Matrix& M);
Json vector_to_json(const Vector& v);
Matrix matrix_from_json(const Json& j);
Vector vector_from_json(const Json& j);

/// Shortest round-trip formatting, used for CSV cells and report keys.
std::string format_double(double x);

}  // namespace rlconn

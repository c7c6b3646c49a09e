#ifndef U2REG_LOSSES_HPP
#define U2REG_LOSSES_HPP

// Loss family for regression under one-sided label corruption.
//
// A loss is split by side of the current prediction: the upper side holds
// points with f(x) <= y (ties included), the lower side points with y < f(x).
// The unbiased gradient needs, on the side whose labels are untrusted, a loss
// whose derivative w.r.t. f(x) is a constant there. Absolute
// and pinball losses qualify; squared and Huber losses do not.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace u2reg {

enum class Side { upper, lower };

/// Side of a (prediction, label) pair. Ties go to the upper side.
constexpr Side side_of(double f_x, double y) noexcept {
  return f_x <= y ? Side::upper : Side::lower;
}

class LossKind {
 public:
  enum class Tag { squared, absolute, pinball, huber };

  static LossKind squared() { return LossKind(Tag::squared, 0.0); }
  static LossKind absolute() { return LossKind(Tag::absolute, 0.0); }
  static LossKind pinball(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) {
      throw std::invalid_argument("pinball tau must lie strictly in (0,1), got " +
                                  std::to_string(tau));
    }
    return LossKind(Tag::pinball, tau);
  }
  static LossKind huber(double delta) {
    if (!(delta > 0.0) || !std::isfinite(delta)) {
      throw std::invalid_argument("huber delta must be positive, got " + std::to_string(delta));
    }
    return LossKind(Tag::huber, delta);
  }

  /// Parses "squared", "absolute", "pinball:<tau>", "huber:<delta>".
  static LossKind parse(std::string_view text);

  Tag tag() const noexcept { return tag_; }
  /// tau for pinball, delta for huber, 0 otherwise.
  double param() const noexcept { return param_; }
  std::string name() const;

  friend bool operator==(const LossKind&, const LossKind&) = default;

 private:
  LossKind(Tag tag, double param) : tag_(tag), param_(param) {}
  Tag tag_;
  double param_;
};

struct LossSpec {
  LossKind upper = LossKind::absolute();
  LossKind lower = LossKind::absolute();

  const LossKind& kind(Side side) const noexcept { return side == Side::upper ? upper : lower; }
  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

namespace detail {

inline double sign0(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double value(const LossKind& k, double f_x, double y) noexcept {
  const double r = f_x - y;
  switch (k.tag()) {
    case LossKind::Tag::squared:
      return r * r;
    case LossKind::Tag::absolute:
      return std::abs(r);
    case LossKind::Tag::pinball: {
      const double tau = k.param();
      return r > 0.0 ? (1.0 - tau) * r : -tau * r;
    }
    case LossKind::Tag::huber: {
      // Scaled so the quadratic part matches the squared loss exactly.
      const double d = k.param();
      const double a = std::abs(r);
      return a <= d ? r * r : 2.0 * d * a - d * d;
    }
  }
  return 0.0;
}

inline double derivative(const LossKind& k, double f_x, double y) noexcept {
  const double r = f_x - y;
  switch (k.tag()) {
    case LossKind::Tag::squared:
      return 2.0 * r;
    case LossKind::Tag::absolute:
      return sign0(r);
    case LossKind::Tag::pinball:
      if (r > 0.0) return 1.0 - k.param();
      if (r < 0.0) return -k.param();
      return 0.0;
    case LossKind::Tag::huber: {
      const double d = k.param();
      return std::abs(r) <= d ? 2.0 * r : 2.0 * d * sign0(r);
    }
  }
  return 0.0;
}

}  // namespace detail

inline double loss_value(const LossSpec& spec, double f_x, double y, Side side) noexcept {
  return detail::value(spec.kind(side), f_x, y);
}

/// dL/df(x). Returns the subgradient 0 at the kink of absolute/pinball.
inline double dloss_df(const LossSpec& spec, double f_x, double y, Side side) noexcept {
  return detail::derivative(spec.kind(side), f_x, y);
}

/// Executable check for a label-free gradient: the derivative on `side` must not change
/// across probe labels from just past the kink to far away.
inline bool has_label_free_gradient(const LossKind& kind, Side side) noexcept {
  const double f = 0.25;
  const double sign = side == Side::lower ? -1.0 : 1.0;
  const double g0 = detail::derivative(kind, f, f + sign * 1e-9);
  for (double gap : {1.25, 8.0, 1e6}) {
    if (detail::derivative(kind, f, f + sign * gap) != g0) return false;
  }
  return true;
}

namespace detail {
inline double constant_side_gradient(const LossKind& kind, Side side) {
  if (!has_label_free_gradient(kind, side)) {
    throw std::invalid_argument("loss '" + kind.name() + "' has a y-dependent gradient on the " +
                                (side == Side::lower ? "lower" : "upper") +
                                " side");
  }
  return side == Side::lower ? derivative(kind, 0.0, -1.0) : derivative(kind, 0.0, 1.0);
}
}  // namespace detail

/// Constant c with dloss_df(spec, f, y, lower) == c for every y < f.
/// absolute -> 1, pinball(tau) -> 1 - tau.
inline double lower_grad_coeff(const LossSpec& spec) {
  return detail::constant_side_gradient(spec.lower, Side::lower);
}

/// Mirror of lower_grad_coeff for LU regression: constant dL/df for f < y.
/// absolute -> -1, pinball(tau) -> -tau.
inline double upper_grad_coeff(const LossSpec& spec) {
  return detail::constant_side_gradient(spec.upper, Side::upper);
}

/// Loss spec seen through y -> -y, f -> -f: sides swap and pinball tau -> 1 - tau.
inline LossSpec mirrored(const LossSpec& spec) {
  auto flip = [](const LossKind& k) {
    return k.tag() == LossKind::Tag::pinball ? LossKind::pinball(1.0 - k.param()) : k;
  };
  return LossSpec{flip(spec.lower), flip(spec.upper)};
}

inline LossKind LossKind::parse(std::string_view text) {
  auto param_of = [&](std::string_view prefix) -> double {
    const std::string rest(text.substr(prefix.size()));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != rest.size()) {
      throw std::invalid_argument("bad loss parameter in '" + std::string(text) + "'");
    }
    return v;
  };
  if (text == "squared") return squared();
  if (text == "absolute") return absolute();
  if (text.starts_with("pinball:")) return pinball(param_of("pinball:"));
  if (text.starts_with("huber:")) return huber(param_of("huber:"));
  throw std::invalid_argument("unknown loss '" + std::string(text) +
                              "' (expected squared, absolute, pinball:<tau>, huber:<delta>)");
}

inline std::string LossKind::name() const {
  auto num = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  switch (tag_) {
    case Tag::squared:
      return "squared";
    case Tag::absolute:
      return "absolute";
    case Tag::pinball:
      return "pinball:" + num(param_);
    case Tag::huber:
      return "huber:" + num(param_);
  }
  return "?";
}

}  // namespace u2reg

#endif  // U2REG_LOSSES_HPP

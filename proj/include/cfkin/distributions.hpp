#pragma once

namespace cfkin::dist {

/// Regularized incomplete beta function I_x(a, b), a > 0, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

/// Upper-tail probability P(F > f) for the F distribution with (df1, df2).
double f_upper_tail(double f, double df1, double df2);

}  // namespace cfkin::dist

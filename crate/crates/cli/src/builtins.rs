//! Built-in system files, shipped verbatim.

pub const RELATIVISTIC_FREE: &str = "\
# Free massive relativistic particle in 1+1 dimensions, metric diag(-1, 1).
# The Legendre transform is singular with one primary constraint; E = 0.

[variables]
q0 state
q1 state
v0 velocity
v1 velocity
p0 state
p1 state
lam multiplier

[parameters]
m = 1

[lagrangian]
coordinates = q0, q1
velocities = v0, v1
momenta = p0, p1
L = m*sqrt(-v0^2 + v1^2)

[constraints]
-p0^2 + p1^2 - m^2

[dirac]
canonical

[signals]
lam = const(0.5)

[simulation]
t0 = 0
t1 = 1
dt = 1e-3
x0 = 0, 0, 0, 1
";

pub const RELATIVISTIC_EM: &str = "\
# Charged relativistic particle in an external field A = (A0, A1), taken as
# an input that enters the constraint nonlinearly. The field is held constant
# in the simulation: a time-varying A moves the constraint surface and the
# projection then does work that shows up in the balance residuals.

[variables]
q0 state
q1 state
v0 velocity
v1 velocity
p0 state
p1 state
A0 input
A1 input
lam multiplier

[parameters]
m = 1
e = 0.5

[lagrangian]
coordinates = q0, q1
velocities = v0, v1
momenta = p0, p1
L = m*sqrt(-v0^2 + v1^2) + e*(A0*v0 + A1*v1)

[constraints]
-(p0 - e*A0)^2 + (p1 - e*A1)^2 - m^2

[inputs]
A0
A1

[dirac]
canonical

[signals]
lam = const(0.5)
A0 = const(0)
A1 = const(0.2)

[simulation]
t0 = 0
t1 = 1
dt = 1e-3
x0 = 0, 0, 0, 1.1
";

pub const OSCILLATOR: &str = "\
# Unit harmonic oscillator: no multipliers, no inputs.

[variables]
q state
p state

[hamiltonian]
coordinates = q
momenta = p
H = 1/2*(q^2 + p^2)

[dirac]
canonical

[simulation]
t0 = 0
t1 = 10
dt = 1e-3
x0 = 1, 0
";

pub const SECOND_CLASS_TOY: &str = "\
# Free particle pinned to q = 0. The consistency condition produces p = 0,
# both constraints are second class and the multiplier is fixed to zero.

[variables]
q state
p state

[hamiltonian]
coordinates = q
momenta = p
H = 1/2*p^2

[constraints]
q

[dirac]
canonical

[simulation]
t0 = 0
t1 = 1
dt = 1e-2
x0 = 0, 0
";

pub const IO_LINEAR: &str = "\
# Free particle driven by a force u entering linearly, output y = q.

[variables]
q state
p state
u input

[hamiltonian]
coordinates = q
momenta = p
H = 1/2*p^2

[inputs]
u = q

[dirac]
canonical

[signals]
u = sin(1, 1, 0)

[simulation]
t0 = 0
t1 = 5
dt = 1e-3
x0 = 0, 0
";

/// Name and file text of every built-in, in a fixed order.
pub const BUILTINS: [(&str, &str); 5] = [
    ("relativistic_free", RELATIVISTIC_FREE),
    ("relativistic_em", RELATIVISTIC_EM),
    ("oscillator", OSCILLATOR),
    ("second_class_toy", SECOND_CLASS_TOY),
    ("io_linear", IO_LINEAR),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

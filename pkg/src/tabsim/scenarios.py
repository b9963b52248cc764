"""Built-in scenario files reproducing the published experiments at desk scale.

Each entry is the text of an INI scenario file; ``tabsim.cli`` accepts these
names wherever it accepts a path.
"""

_BASE = """\
[system]
n_servers = 10000
buffer = 10

[timers]
mu = 0.1
nu = 0.1

[energy]
p_full = 200
p_idle = 140

[run]
horizon = 250
sample_interval = 1
seed = 1
replications = 5
warmup_fraction = 0.4
"""

SCENARIOS = {
    # constant load, exponential service
    "fig2-left": _BASE + """
[arrivals]
kind = constant
rate = 0.3

[service]
kind = exponential

[policy]
name = tabs
""",
    # periodic load 0.3 + 0.2 sin(t / 10)
    "fig2-middle": _BASE + """
[arrivals]
kind = sinusoid
base = 0.3
amplitude = 0.2
period = 10

[service]
kind = exponential

[policy]
name = tabs
""",
    # hyper-exponential service: Exp(2) w.p. 0.75, Exp(0.4) w.p. 0.25 (mean 1)
    "fig2-right": _BASE + """
[arrivals]
kind = constant
rate = 0.3

[service]
kind = phase_type
r = 0.75, 0.25
R = 0, 0; 0, 0
gamma = 2, 0.4

[policy]
name = tabs
""",
    # mean wait and energy against N, short setups
    "fig3-nu10": _BASE.replace("replications = 5", "replications = 3") + """
[arrivals]
kind = constant
rate = 0.3

[service]
kind = exponential

[policy]
name = tabs

[sweep]
parameter = n_servers
values = 100, 1000, 10000
""",
    # mean wait and energy against N, long setups
    "fig3-nu100": _BASE.replace("replications = 5", "replications = 3").replace("nu = 0.1", "nu = 0.01") + """
[arrivals]
kind = constant
rate = 0.3

[service]
kind = exponential

[policy]
name = tabs

[sweep]
parameter = n_servers
values = 100, 1000, 10000
""",
    # TABS against the centralized delayed-off queue over the standby period
    "fig4": _BASE.replace("n_servers = 10000", "n_servers = 1000").replace("replications = 5", "replications = 3") + """
[arrivals]
kind = constant
rate = 0.3

[service]
kind = exponential

[policy]
name = tabs
compare = tabs, delayedoff

[sweep]
parameter = mu_inverse
values = 0.1, 1, 10, 100
""",
}

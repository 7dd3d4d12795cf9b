"""
Resolves a RunContext from, lowest precedence first: built-in defaults, per-command defaults,
the environment (.env), a flat key = value config file and command-line flags.
"""
import re
import argparse
from typing import Callable, Dict, List, Optional, Sequence

from .context import COMMANDS, RunContext
from .errors import ConfigError
from .ergodics_utils import BURN_IN_FLOOR, DEFAULT_THINNING
from .filtering_utils import TEST_FUNCTIONS
from .model_utils import MODEL_REGISTRY, get_model
from .noise_utils import make_grid

DYADIC_ITEM = re.compile(r'^(\d+(?:\.\d+)?)\^([+-]?\d+)$')


def parse_eps(text: str) -> List[float]:
    """
    Comma-separated epsilons. Each item is a number, a power such as 2^-4, or a dyadic range
    2^-4..2^-10 that expands to every integer exponent between the two ends.
    """
    values = []
    for item in (part.strip() for part in str(text).split(',')):
        if not item:
            continue
        if '..' in item:
            start, stop = (DYADIC_ITEM.match(end.strip()) for end in item.split('..', 1))
            if not start or not stop or float(start.group(1)) != float(stop.group(1)):
                raise ConfigError('eps', f"ranges must look like 2^-4..2^-10 with one base, received: {item!r}")
            base = float(start.group(1))
            first, last = int(start.group(2)), int(stop.group(2))
            step = 1 if last >= first else -1
            values.extend(base ** exponent for exponent in range(first, last + step, step))
            continue
        power = DYADIC_ITEM.match(item)
        try:
            values.append(float(power.group(1)) ** int(power.group(2)) if power else float(item))
        except ValueError:
            raise ConfigError('eps', f"could not parse epsilon {item!r}")
    if not values:
        raise ConfigError('eps', f"no epsilon values in {text!r}")
    return values


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {text!r}')


def parse_int(text) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f'not an integer: {text!r}')
    return int(value)


# config key -> (RunContext attribute, converter)
KEYS: Dict[str, tuple] = {
    'model':             ('model_name',        str),
    'sigma':             ('sigma',             float),
    'x0':                ('x0',                float),
    'T':                 ('T',                 float),
    'dt_obs':            ('dt_obs',            float),
    'dt':                ('dt',                float),
    'kappa':             ('kappa',             float),
    'eps':               ('eps_grid',          parse_eps),
    'particles':         ('particles',         parse_int),
    'law_particles':     ('law_particles',     parse_int),
    'reps':              ('reps',              parse_int),
    'seed':              ('seed',              parse_int),
    't_eval':            ('t_eval',            float),
    'F':                 ('test_function',     str),
    'out':               ('output_path',       str),
    'threads':           ('threads',           parse_int),
    'burn_in':           ('burn_in',           float),
    'thinning':          ('thinning',          float),
    'invariant_samples': ('invariant_samples', parse_int),
    'r':                 ('r',                 float),
    'resample':          ('resample',          parse_bool),
    'h_zero':            ('h_zero',            parse_bool),
    'n_pairs':           ('n_pairs',           parse_int),
    'radius':            ('radius',            float),
}

COMMAND_DEFAULTS: Dict[str, dict] = {
    'check-hypotheses':   {},
    'simulate':           {'eps': [2.0 ** -6], 'particles': 1000, 'invariant_samples': 4096},
    'ergodics':           {'T': 8.0, 'reps': 4000, 'invariant_samples': 4096},
    'averaging-rate':     {'eps': [2.0 ** -k for k in range(4, 11)], 'particles': 1000, 'invariant_samples': 65536},
    'filter-convergence': {'eps': [2.0 ** -k for k in (4, 6, 8, 10)], 'particles': 2000, 'invariant_samples': 65536},
    'martingale':         {'eps': [0.1], 'particles': 100_000},
    'inverse-moment':     {'eps': [2.0 ** -4, 2.0 ** -6], 'particles': 200},
}

MIN_EPS_POINTS = {'averaging-rate': 4, 'filter-convergence': 3}
INVARIANT_COMMANDS = ('simulate', 'ergodics', 'averaging-rate', 'filter-convergence')
REPLICATED_COMMANDS = ('ergodics', 'averaging-rate', 'filter-convergence', 'inverse-moment')


def _convert(key: str, value) -> object:
    if key not in KEYS:
        raise ConfigError(key, "unknown key")
    converter: Callable = KEYS[key][1]
    try:
        return converter(value)
    except ConfigError:
        raise
    except (TypeError, ValueError):
        raise ConfigError(key, f"could not parse value {value!r}")


def _assign(context: RunContext, key: str, value):
    setattr(context, KEYS[key][0], _convert(key, value))


def read_config_file(path: str) -> Dict[str, str]:
    '''Flat key = value lines; '#' starts a comment; blank lines are skipped; duplicate keys are rejected.'''
    values: Dict[str, str] = {}
    try:
        with open(path, encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError('config', f"cannot read {path}: {e}")
    for number, line in enumerate(lines, 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('config', f"line {number} of {path} is not 'key = value': {line!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in KEYS:
            raise ConfigError(key, f"unknown key on line {number} of {path}")
        if key in values:
            raise ConfigError(key, f"duplicate key on line {number} of {path}")
        values[key] = value
    return values


class _ArgumentParser(argparse.ArgumentParser):
    '''Reports argument errors as ConfigError instead of exiting.'''

    def error(self, message):
        match = re.search(r'argument (?:--)?([\w-]+)', message) or re.search(r'--([\w-]+)', message)
        key = match.group(1).replace('-', '_') if match else 'argv'
        raise ConfigError(key, message)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='mvfilter', allow_abbrev=False, description='Multiscale McKean-Vlasov simulation and filtering experiments.')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', default=None, help='flat key = value file; flags override its values')
    for key in KEYS:
        flag = '--' + key.replace('_', '-')
        if KEYS[key][1] is parse_bool:
            parser.add_argument(flag, dest=key, action='store_const', const='true', default=None)
        else:
            parser.add_argument(flag, dest=key, default=None)
    return parser


def validate_for_command(context: RunContext):
    '''Checks that depend on the command or on other modules; every failure names its key.'''
    if context.model_name not in MODEL_REGISTRY:
        raise ConfigError('model', f"unknown model {context.model_name!r}, registered: {', '.join(sorted(MODEL_REGISTRY))}")
    if context.test_function not in TEST_FUNCTIONS:
        raise ConfigError('F', f"unknown test function {context.test_function!r}, bundled: {', '.join(sorted(TEST_FUNCTIONS))}")
    if context.command in MIN_EPS_POINTS and len(context.eps_grid or []) < MIN_EPS_POINTS[context.command]:
        raise ConfigError('eps', f"{context.command} needs at least {MIN_EPS_POINTS[context.command]} epsilon values, received: {context.eps_grid}")
    if context.command in ('simulate', 'averaging-rate', 'filter-convergence', 'martingale', 'inverse-moment'):
        if any(eps >= 1 for eps in context.eps_grid or []):
            raise ConfigError('eps', f"every epsilon must lie in (0, 1), received: {context.eps_grid}")
        try:
            make_grid(context.T, context.coarse_step)
        except ValueError as e:
            raise ConfigError('dt_obs', str(e))
    if context.command in ('ergodics',):
        try:
            make_grid(context.T, context.dt)
        except ValueError as e:
            raise ConfigError('dt', str(e))
    if context.command in INVARIANT_COMMANDS and not (context.command == 'simulate' and context.h_zero):
        beta = get_model(context.model_name, context.sigma, context.x0).dissipativity
        if context.burn_in is not None and context.burn_in < BURN_IN_FLOOR / beta:
            raise ConfigError('burn_in', f"must be >= 5/beta = {BURN_IN_FLOOR / beta:g} for model {context.model_name!r}, received: {context.burn_in}")
        thinning = context.thinning if context.thinning is not None else DEFAULT_THINNING / beta
        if thinning < context.kappa:
            raise ConfigError('thinning', f"must be >= kappa = {context.kappa:g} (the frozen step), received: {thinning:g}")
    if context.command in REPLICATED_COMMANDS and context.reps < 2:
        raise ConfigError('reps', f"{context.command} needs at least 2 replications, received: {context.reps}")
    if context.command != 'check-hypotheses' and not context.output_path:
        raise ConfigError('out', "missing output path")


def parse_config(argv: Optional[Sequence[str]] = None) -> RunContext:
    """
    Builds and validates the RunContext for one invocation. Raises ConfigError naming the
    offending key; nothing has run at that point.
    """
    args = vars(build_parser().parse_args(argv))
    context = RunContext()
    context.command = args.pop('command')
    config_path = args.pop('config')

    for key, value in COMMAND_DEFAULTS[context.command].items():
        setattr(context, KEYS[key][0], value)
    if config_path:
        for key, value in read_config_file(config_path).items():
            _assign(context, key, value)
    for key, value in args.items():
        if value is not None:
            _assign(context, key, value)

    context.confirm_all_mandatory_fields_are_initialized()
    validate_for_command(context)
    return context

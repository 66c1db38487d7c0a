# -------------------------------------------
# util.py - various utilities
# -------------------------------------------

"""Various utilities"""

import hashlib
import json
import random

import numpy as np
import torch


def seed_everything(seed):
    """
    Seed every random number generator a run touches.

    Also asks torch for deterministic kernels, so that two runs with the same
    seed produce the same parameters.

    :param seed:
        The integer seed.

    """
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def derive_seed(*keys):
    """
    Derive an independent 32-bit seed from a tuple of integers.

    Used to give every (run, step, RoI, region) its own reproducible stream.

    :param keys:
        Non-negative integers identifying the stream.

    """
    sequence = np.random.SeedSequence([int(key) for key in keys])
    return int(sequence.generate_state(1)[0])


def stable_digest(obj):
    """
    SHA-1 of the canonical JSON form of `obj` (sorted keys).

    :param obj:
        Any JSON-serialisable object.

    """
    canonical = json.dumps(obj, sort_keys=True, separators=(',', ':'),
                           default=str)
    return hashlib.sha1(canonical.encode('utf-8')).hexdigest()


def Override(superclass):
    """
    A decorator wrapping a method which overrides a method in a superclass.

    Asserts that the method name is also present in the superclass.

    :param superclass:
        The superclass.
    :raises AssertionError:
        If the method does not override a method in the superclass.

    """
    def overrider(method):
        assert(method.__name__ in dir(superclass))
        return method
    return overrider


def log(logger):
    """
    A decorator wrapping a function for logging.

    Logs function entry and exit at level DEBUG, any exceptions that occur
    at level EXCEPTION, and arguments/optional arguments at level DEBUG.

    :param logger:
        The logging object to log to.

    """
    def decorator(fn):
        from functools import wraps

        @wraps(fn)
        def wrapper(*args, **kwargs):
            logger.debug('Entering function: {}'.format(fn.__name__))
            args_list = [_short(arg) for arg in list(args)]
            if kwargs:
                logger.debug(
                    "Args: {}\nKwargs: {}".format(
                        str(args_list),
                        str({key: _short(val) for key, val in kwargs.items()}))
                )
            else:
                logger.debug("Args: {}".format(str(args_list)))
            try:
                # Apply the function
                out = fn(*args, **kwargs)
            except Exception:
                # Catch and log any exceptions
                logger.debug("Exception in {}".format(fn.__name__),
                             exc_info=True)
                # Re-raise the exception
                raise

            logger.debug("Leaving function: {}".format(fn.__name__))

            # Return the return value
            return out

        return wrapper
    return decorator


def _short(arg):
    """ Arrays and tensors are logged by shape, not by value """
    if isinstance(arg, (np.ndarray, torch.Tensor)):
        return "<{} {}>".format(type(arg).__name__, tuple(arg.shape))
    text = str(arg)
    return text if len(text) <= 200 else text[:200] + "..."

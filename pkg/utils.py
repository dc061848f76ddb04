# utils.py
import os
import re
import sys

import numpy as np


def clean_run_name(name):
    """Cleans a string to be usable as a run / file name part."""
    if not isinstance(name, str): return ""
    name = re.sub(r'[ /.\-+()=,]+', '_', name)
    name = name.strip('_')
    return name


def get_resource_path(relative_path):
    """ Get absolute path to resource, works for dev and for PyInstaller """
    try:
        # PyInstaller creates a temp folder and stores path in _MEIPASS
        base_path = sys._MEIPASS
    except Exception:
        base_path = os.path.abspath(os.path.dirname(__file__))

    return os.path.join(base_path, relative_path)


# --- Voigt helpers (engineering shear, order 11, 22, 12) ---
def plane_strain_stiffness(E, nu):
    """Isotropic plane-strain stiffness in Voigt form."""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return np.array([[lam + 2.0 * mu, lam, 0.0],
                     [lam, lam + 2.0 * mu, 0.0],
                     [0.0, 0.0, mu]])


def square_symmetric(c11, c12, c44):
    return np.array([[c11, c12, 0.0],
                     [c12, c11, 0.0],
                     [0.0, 0.0, c44]])


def tensor_to_voigt(eps):
    eps = np.asarray(eps, dtype=float)
    return np.array([eps[0, 0], eps[1, 1], 2.0 * eps[0, 1]])


def voigt_to_tensor(v):
    return np.array([[v[0], 0.5 * v[2]],
                     [0.5 * v[2], v[1]]])

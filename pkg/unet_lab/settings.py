"""
Django settings for unet_lab project.

UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


def env_flag(name, default=False):
    """Lit une variable d'environnement booléenne ("1", "true", "yes", "on")"""
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


# SECURITY WARNING: keep the secret key used in production secret!
# Aucune vue n'est servie, la clé n'est utilisée que par les apps contrib.
SECRET_KEY = os.environ.get("UNET_LAB_SECRET_KEY", "django-insecure-unet-lab-local-harness")

DEBUG = env_flag("DEBUG", False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    # Applications du projet
    "core",
    "architecture",
    "ingestion",
    "training",
    "scoring",
    "experiments",
    "insights",
]

MIDDLEWARE = []


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.environ.get("UNET_LAB_DATABASE", BASE_DIR / "db.sqlite3"),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = "fr-fr"

TIME_ZONE = "Europe/Paris"

USE_I18N = True

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOG_LEVEL = os.environ.get("UNET_LAB_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        app: {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False}
        for app in ("core", "architecture", "ingestion", "training", "scoring", "experiments", "insights")
    },
}


# Paramètres du harnais d'expériences
UNET_LAB = {
    # Exécution déterministe (algorithmes déterministes de torch, graines fixées)
    "DETERMINISTIC": env_flag("UNET_LAB_DETERMINISTIC", False),
    # "cpu", "cuda" ou "auto" (cuda si disponible)
    "DEVICE": os.environ.get("UNET_LAB_DEVICE", "cpu"),
    # Nombre de cellules (schéma, fold) exécutées en parallèle; 1 = séquentiel
    "MAX_WORKERS": int(os.environ.get("UNET_LAB_MAX_WORKERS", "1")),
    "DEFAULT_IMAGE_SIZE": 256,
    "CHECKPOINT_FORMAT_VERSION": 1,
}

from importlib import metadata


def app_name() -> str:
    return "rqmcompress"


def version() -> str:
    try:
        return metadata.version(app_name())
    except metadata.PackageNotFoundError:
        return "0.0.1"

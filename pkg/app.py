import sys

from app_factory import create_app
from routes.cli import run


def main(argv=None) -> int:
    app = create_app()
    return run(app, argv)


if __name__ == '__main__':
    sys.exit(main())

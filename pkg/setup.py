import argparse
import os
import subprocess
import venv

ENV_NAME = ".venv" if os.name != "nt" else "venv"
BIN_DIR = "Scripts" if os.name == "nt" else "bin"
MNIST_DIR = os.path.join("data", "mnist")
MNIST_FILES = ["train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
               "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"]


def env_python(env_dir=ENV_NAME):
    return os.path.join(env_dir, BIN_DIR, "python.exe" if os.name == "nt" else "python")


def ensure_env(env_dir=ENV_NAME, clear=False):
    """Builds the environment with pip bootstrapped; an existing one is reused unless clear is set."""
    if os.path.isdir(env_dir) and not clear:
        print(f"[INFO] Reusing the environment in '{env_dir}'.")
        return
    print(f"[INFO] Building the environment in '{env_dir}'...")
    venv.EnvBuilder(with_pip=True, clear=clear).create(env_dir)


def pip_install(env_dir=ENV_NAME, requirements="requirements.txt"):
    # pip is run as a module of the env interpreter so a stale pip launcher is never used
    python = env_python(env_dir)
    subprocess.run([python, "-m", "pip", "install", "--quiet", "--upgrade", "pip"], check=True)
    subprocess.run([python, "-m", "pip", "install", "-r", requirements], check=True)
    print(f"[INFO] Installed {requirements} into '{env_dir}'.")


def check_data():
    """The permuted and split benchmarks read the MNIST IDX files from data/mnist."""
    os.makedirs(MNIST_DIR, exist_ok=True)
    missing = [name for name in MNIST_FILES if not os.path.isfile(os.path.join(MNIST_DIR, name))]
    if missing:
        print(f"[WARNING] Missing in {MNIST_DIR}: {', '.join(missing)}. Only synthetic benchmarks will run.")
    else:
        print(f"[INFO] MNIST files found in {MNIST_DIR}.")


def main():
    parser = argparse.ArgumentParser(description="Prepare the environment for the continual learning experiments.")
    parser.add_argument("--env", default=ENV_NAME, help="environment directory")
    parser.add_argument("--clear", action="store_true", help="rebuild the environment from scratch")
    parser.add_argument("--skip-install", action="store_true", help="only build the environment and check the data")
    args = parser.parse_args()

    ensure_env(args.env, clear=args.clear)
    if not args.skip_install:
        pip_install(args.env)
    check_data()
    activate = os.path.join(args.env, BIN_DIR, "activate")
    print(f"\nSetup complete. Activate the environment with:\n\n    {'' if os.name == 'nt' else 'source '}{activate}\n")


if __name__ == "__main__":
    main()

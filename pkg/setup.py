from setuptools import setup

setup(
	name='Notif_Attendance',
	version='0.1.0',
	packages=['Notif_Attendance'],
	include_package_data=True,
	python_requires='>=3.8',
	install_requires=[
		'numpy'],
	extras_require={
		'test': ['pytest>=7']},
	entry_points={
		'console_scripts': [
			'notif-attendance=Notif_Attendance.cli:main']},
	)
